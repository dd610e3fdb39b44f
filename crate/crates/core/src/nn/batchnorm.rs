//! Batch normalization over the rows of a feature matrix.
//!
//! For convolutional maps the rows are every (sample, position) pair, so the
//! statistics are per kernel across the batch and the time axis.

use serde::{Deserialize, Serialize};

use super::{NnError, Tensor2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Per-feature statistics of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance, used for normalization.
    pub var: Vec<f64>,
    pub count: usize,
}

impl BnBatchStats {
    pub fn inv_std(&self, eps: f64) -> Vec<f64> {
        self.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect()
    }
}

impl BatchNormParams {
    pub const DEFAULT_MOMENTUM: f64 = 0.1;
    pub const DEFAULT_EPS: f64 = 1e-5;

    /// γ = 1, β = 0, running mean 0, running variance 1.
    pub fn new(features: usize) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, cols: usize) -> Result<(), NnError> {
        if cols != self.features() {
            return Err(NnError::ShapeMismatch(format!(
                "batch has {cols} features, batch norm expects {}",
                self.features()
            )));
        }
        Ok(())
    }

    /// Folds one batch's statistics into the running estimates. The running
    /// variance uses the unbiased batch variance.
    pub fn absorb(&mut self, stats: &BnBatchStats) {
        let m = self.momentum;
        let n = stats.count as f64;
        let unbias = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        for f in 0..self.features() {
            self.running_mean[f] = (1.0 - m) * self.running_mean[f] + m * stats.mean[f];
            self.running_var[f] = (1.0 - m) * self.running_var[f] + m * stats.var[f] * unbias;
        }
    }

    /// Normalizes `data` (row-major, `features` columns) in place with the
    /// given mean and inverse standard deviation, then scales and shifts.
    pub(crate) fn apply(&self, data: &mut [f64], mean: &[f64], inv_std: &[f64]) {
        let f = self.features();
        for row in data.chunks_exact_mut(f) {
            for j in 0..f {
                row[j] = self.gamma[j] * (row[j] - mean[j]) * inv_std[j] + self.beta[j];
            }
        }
    }

    pub(crate) fn apply_infer(&self, data: &mut [f64]) {
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let mean = self.running_mean.clone();
        self.apply(data, &mean, &inv_std);
    }
}

/// Mean and biased variance of each column of a row-major block.
pub fn batch_stats(data: &[f64], features: usize) -> BnBatchStats {
    let rows = data.len() / features;
    let mut mean = vec![0.0; features];
    for row in data.chunks_exact(features) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    let n = rows.max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; features];
    for row in data.chunks_exact(features) {
        for j in 0..features {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    BnBatchStats {
        mean,
        var,
        count: rows,
    }
}

/// Spec-level batch norm: `batch` has one row per sample. Train mode
/// normalizes by the batch statistics and updates the running estimates.
pub fn batch_norm_forward(
    batch: &Tensor2,
    params: &mut BatchNormParams,
    mode: BnMode,
) -> Result<Tensor2, NnError> {
    params.check(batch.cols())?;
    let mut out = batch.clone();
    match mode {
        BnMode::Train => {
            if batch.rows() < 2 {
                return Err(NnError::BatchTooSmall(batch.rows()));
            }
            let stats = batch_stats(batch.as_slice(), batch.cols());
            let inv_std = stats.inv_std(params.eps);
            params.apply(out.as_mut_slice(), &stats.mean, &inv_std);
            params.absorb(&stats);
        }
        BnMode::Infer => params.apply_infer(out.as_mut_slice()),
    }
    Ok(out)
}

/// Backward through train-mode batch norm.
///
/// `input` is the pre-normalization block, `grad` holds dL/dy on entry and
/// dL/dx on exit. γ and β gradients are accumulated.
pub(crate) fn batch_norm_backward_train(
    params: &BatchNormParams,
    input: &[f64],
    stats: &BnBatchStats,
    grad: &mut [f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) {
    let f = params.features();
    let inv_std = stats.inv_std(params.eps);
    let mut sum_dy = vec![0.0; f];
    let mut sum_dy_xhat = vec![0.0; f];
    for (xr, gr) in input.chunks_exact(f).zip(grad.chunks_exact(f)) {
        for j in 0..f {
            let xhat = (xr[j] - stats.mean[j]) * inv_std[j];
            sum_dy[j] += gr[j];
            sum_dy_xhat[j] += gr[j] * xhat;
        }
    }
    for j in 0..f {
        grad_gamma[j] += sum_dy_xhat[j];
        grad_beta[j] += sum_dy[j];
    }
    let n = stats.count as f64;
    for (xr, gr) in input.chunks_exact(f).zip(grad.chunks_exact_mut(f)) {
        for j in 0..f {
            let xhat = (xr[j] - stats.mean[j]) * inv_std[j];
            gr[j] = params.gamma[j] * inv_std[j] / n
                * (n * gr[j] - sum_dy[j] - xhat * sum_dy_xhat[j]);
        }
    }
}

/// Backward through infer-mode batch norm (a fixed affine map).
pub(crate) fn batch_norm_backward_infer(
    params: &BatchNormParams,
    input: &[f64],
    grad: &mut [f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) {
    let f = params.features();
    for (xr, gr) in input.chunks_exact(f).zip(grad.chunks_exact_mut(f)) {
        for j in 0..f {
            let inv_std = 1.0 / (params.running_var[j] + params.eps).sqrt();
            let xhat = (xr[j] - params.running_mean[j]) * inv_std;
            grad_gamma[j] += gr[j] * xhat;
            grad_beta[j] += gr[j];
            gr[j] *= params.gamma[j] * inv_std;
        }
    }
}
