//! Neural-network kernel: convolution, batch norm, pooling, dense layers,
//! loss, Adam and gradient checking. Everything is `f64`.

pub mod activation;
pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod loss;
pub mod pool;
pub(crate) mod tensor;

pub use activation::{relu, sigmoid};
pub use adam::{adam_step, AdamState};
pub use batchnorm::{batch_norm_forward, BatchNormParams, BnMode};
pub use conv::{conv_valid, ConvLayerParams};
pub use dense::{dense, DenseParams};
pub use gradcheck::{grad_check, GradCheckReport, Objective};
pub use loss::{bce_l2_loss, PROB_CLAMP};
pub use pool::kmax_pool;
pub use tensor::Tensor2;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence of length {len} is too short for {k}-max pooling")]
    TooShort { len: usize, k: usize },
    #[error("train-mode batch norm needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("probability {0} outside [0, 1]")]
    DomainError(f64),
    #[error("non-finite gradient in tensor {tensor} at index {index}")]
    NonFiniteGradient { tensor: usize, index: usize },
}
