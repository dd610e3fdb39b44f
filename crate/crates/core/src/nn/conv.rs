//! Valid (unpadded) convolution along the time axis.
//!
//! Feature maps are stored time-major: one row per position, one column per
//! feature. A kernel of width `w` over `f` input features sees the `w·f`
//! contiguous values starting at row `p·stride`, so the im2col matrix is a
//! strided view of the input and each layer is a single GEMM.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, MatRef};
use super::{NnError, Tensor2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerParams {
    in_features: usize,
    width: usize,
    kernels: usize,
    stride: usize,
    /// `(width · in_features) × kernels`, row index `s · in_features + r`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ConvLayerParams {
    pub fn zeros(
        in_features: usize,
        width: usize,
        kernels: usize,
        stride: usize,
    ) -> Result<Self, NnError> {
        if in_features == 0 || width == 0 || kernels == 0 || stride == 0 {
            return Err(NnError::ShapeMismatch(format!(
                "conv layer needs positive sizes (in {in_features}, width {width}, kernels {kernels}, stride {stride})"
            )));
        }
        Ok(Self {
            in_features,
            width,
            kernels,
            stride,
            weights: vec![0.0; width * in_features * kernels],
            biases: vec![0.0; kernels],
        })
    }

    /// He-uniform weights scaled by fan-in, zero biases.
    pub fn init<R: Rng + ?Sized>(
        in_features: usize,
        width: usize,
        kernels: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let mut p = Self::zeros(in_features, width, kernels, stride)?;
        let bound = (6.0 / p.fan_in() as f64).sqrt();
        for w in &mut p.weights {
            *w = rng.gen_range(-bound..bound);
        }
        Ok(p)
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kernels(&self) -> usize {
        self.kernels
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn fan_in(&self) -> usize {
        self.width * self.in_features
    }

    /// Weight of kernel `q` at feature `r`, tap `s`.
    #[inline]
    pub fn kernel(&self, q: usize, r: usize, s: usize) -> f64 {
        self.weights[(s * self.in_features + r) * self.kernels + q]
    }

    #[inline]
    pub fn kernel_mut(&mut self, q: usize, r: usize, s: usize) -> &mut f64 {
        &mut self.weights[(s * self.in_features + r) * self.kernels + q]
    }

    /// Number of output positions for an input of `positions` rows, or
    /// `None` when the kernel does not fit.
    pub fn output_len(&self, positions: usize) -> Option<usize> {
        if positions < self.width {
            None
        } else {
            Some((positions - self.width) / self.stride + 1)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.is_finite())
    }
}

/// Convolution over an input laid out as `in_features × positions` (one
/// row per feature). Output is `positions_out × kernels`.
pub fn conv_valid(input: &Tensor2, params: &ConvLayerParams) -> Result<Tensor2, NnError> {
    if input.rows() != params.in_features {
        return Err(NnError::ShapeMismatch(format!(
            "input has {} rows, kernel expects {}",
            input.rows(),
            params.in_features
        )));
    }
    conv_forward(&input.transpose(), params)
}

/// Time-major convolution: `input` is `positions × in_features`.
pub fn conv_forward(input: &Tensor2, params: &ConvLayerParams) -> Result<Tensor2, NnError> {
    let out_len = check_input(input, params)?;
    let mut out = Tensor2::zeros(out_len, params.kernels);
    conv_forward_into(input.as_slice(), out_len, params, out.as_mut_slice());
    Ok(out)
}

fn check_input(input: &Tensor2, params: &ConvLayerParams) -> Result<usize, NnError> {
    if input.cols() != params.in_features {
        return Err(NnError::ShapeMismatch(format!(
            "input has {} features, kernel expects {}",
            input.cols(),
            params.in_features
        )));
    }
    params.output_len(input.rows()).ok_or_else(|| {
        NnError::ShapeMismatch(format!(
            "{} positions is shorter than kernel width {}",
            input.rows(),
            params.width
        ))
    })
}

/// Raw forward on a time-major slice; `out` must hold `out_len × kernels`.
pub(crate) fn conv_forward_into(
    input: &[f64],
    out_len: usize,
    params: &ConvLayerParams,
    out: &mut [f64],
) {
    let u = params.kernels;
    for row in out.chunks_exact_mut(u).take(out_len) {
        row.copy_from_slice(&params.biases);
    }
    let a = MatRef::new(input, params.stride * params.in_features, 1);
    let b = MatRef::dense(&params.weights, u);
    gemm(out_len, params.fan_in(), u, a, b, 1.0, out, u);
}

/// Gradients of a convolution layer. `grad_weights`/`grad_biases` are
/// accumulated into; the returned tensor is the gradient w.r.t. `input`.
pub fn conv_backward(
    input: &Tensor2,
    params: &ConvLayerParams,
    grad_out: &Tensor2,
    grad_weights: &mut [f64],
    grad_biases: &mut [f64],
) -> Result<Tensor2, NnError> {
    let out_len = check_input(input, params)?;
    if grad_out.shape() != (out_len, params.kernels) {
        return Err(NnError::ShapeMismatch(format!(
            "grad_out is {:?}, expected ({out_len}, {})",
            grad_out.shape(),
            params.kernels
        )));
    }
    let mut grad_in = Tensor2::zeros(input.rows(), input.cols());
    let mut scratch = Vec::new();
    conv_backward_into(
        input.as_slice(),
        out_len,
        params,
        grad_out.as_slice(),
        grad_weights,
        grad_biases,
        Some((grad_in.as_mut_slice(), &mut scratch)),
    );
    Ok(grad_in)
}

pub(crate) fn conv_backward_into(
    input: &[f64],
    out_len: usize,
    params: &ConvLayerParams,
    grad_out: &[f64],
    grad_weights: &mut [f64],
    grad_biases: &mut [f64],
    grad_input: Option<(&mut [f64], &mut Vec<f64>)>,
) {
    let u = params.kernels;
    let fan_in = params.fan_in();
    let step = params.stride * params.in_features;
    assert_eq!(grad_weights.len(), params.weights.len());
    assert_eq!(grad_biases.len(), u);
    for row in grad_out.chunks_exact(u).take(out_len) {
        for (g, d) in grad_biases.iter_mut().zip(row) {
            *g += d;
        }
    }
    // dW += im2col(input)^T · grad_out
    let a_t = MatRef::new(input, 1, step);
    gemm(fan_in, out_len, u, a_t, MatRef::dense(grad_out, u), 1.0, grad_weights, u);

    if let Some((grad_in, scratch)) = grad_input {
        // d im2col = grad_out · W^T, then overlap-add back onto the input rows.
        scratch.clear();
        scratch.resize(out_len * fan_in, 0.0);
        gemm(
            out_len,
            u,
            fan_in,
            MatRef::dense(grad_out, u),
            MatRef::dense_t(&params.weights, u),
            0.0,
            scratch,
            fan_in,
        );
        for (p, patch) in scratch.chunks_exact(fan_in).enumerate() {
            let start = p * step;
            for (g, d) in grad_in[start..start + fan_in].iter_mut().zip(patch) {
                *g += d;
            }
        }
    }
}
