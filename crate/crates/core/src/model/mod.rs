//! The multi-channel convolutional sliding-window detector.

mod checkpoint;
mod config;
mod network;
mod objective;

pub use checkpoint::{load, load_expecting, save, CheckpointMetadata};
pub use config::{ArchConfig, LayerShape};
pub use objective::{check_model_gradients, CswObjective};
pub use network::{
    decide, dropout_mask, ConvBlock, CswModel, FeaturePath, ForwardCache, ModelGrads, PathKind,
    Prediction, Verdict,
};

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("clip of {frames} frames is shorter than the model minimum of {minimum}")]
    ClipTooShort { frames: usize, minimum: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("architecture hash mismatch: expected {expected}, found {found}")]
    ArchMismatch { expected: String, found: String },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Nn(#[from] NnError),
}
