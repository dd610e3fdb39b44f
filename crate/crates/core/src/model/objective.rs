//! Gradient-check adapter for the full network.

use super::network::ForwardCache;
use super::{CswModel, ModelError};
use crate::nn::gradcheck::{grad_check, GradCheckReport, Objective};
use crate::nn::{BnMode, NnError, Tensor2};

/// The training loss on a fixed batch, as a function of the parameters.
///
/// Finite-difference evaluations reuse the unperturbed forward pass and
/// recompute only the part of the network a parameter can influence.
pub struct CswObjective {
    pub model: CswModel,
    inputs: Vec<Tensor2>,
    labels: Vec<f64>,
    lambda: f64,
    mode: BnMode,
    dropout: Option<Vec<f64>>,
    base: Option<ForwardCache>,
}

impl CswObjective {
    pub fn new(
        model: CswModel,
        inputs: Vec<Tensor2>,
        labels: Vec<f64>,
        lambda: f64,
        mode: BnMode,
        dropout: Option<Vec<f64>>,
    ) -> Self {
        Self {
            model,
            inputs,
            labels,
            lambda,
            mode,
            dropout,
            base: None,
        }
    }

    fn forward(&self) -> Result<ForwardCache, ModelError> {
        let refs: Vec<&Tensor2> = self.inputs.iter().collect();
        self.model.forward_batch(&refs, self.mode, self.dropout.clone())
    }

    pub fn loss(&self) -> Result<f64, ModelError> {
        self.model.loss(&self.forward()?, &self.labels, self.lambda)
    }

    /// Where tensor `t` lives: `Some((path, layer, slot))` for a path block.
    fn locate(&self, t: usize) -> Option<(usize, usize, usize)> {
        let mut base = 0;
        for (pi, p) in self.model.paths.iter().enumerate() {
            let n = 4 * p.blocks.len();
            if t < base + n {
                let off = t - base;
                return Some((pi, off / 4, off % 4));
            }
            base += n;
        }
        None
    }

    fn eval(&mut self, t: usize, i: usize) -> Result<f64, ModelError> {
        let base = self.base.as_ref().expect("base forward computed");
        match self.locate(t) {
            Some((pi, layer, slot)) => {
                let u = self.model.paths[pi].blocks[layer].conv.kernels();
                let q = if slot == 0 { i % u } else { i };
                self.model
                    .partial_loss(base, pi, layer, Some(q), &self.labels, self.lambda)
            }
            None => self
                .model
                .head_loss(base, base.spliced.clone(), &self.labels, self.lambda),
        }
    }
}

fn nn_err(e: ModelError) -> NnError {
    match e {
        ModelError::Nn(e) => e,
        other => NnError::ShapeMismatch(other.to_string()),
    }
}

impl Objective for CswObjective {
    fn tensor_names(&self) -> Vec<String> {
        self.model.param_names()
    }

    fn tensor_len(&self, tensor: usize) -> usize {
        self.model.param_lens()[tensor]
    }

    fn gradients(&mut self) -> Result<Vec<Vec<f64>>, NnError> {
        let cache = self.forward().map_err(nn_err)?;
        let (_, grads) = self
            .model
            .backward(&cache, &self.labels, self.lambda)
            .map_err(nn_err)?;
        self.base = Some(cache);
        Ok(grads.tensors)
    }

    fn perturbed_loss(&mut self, tensor: usize, index: usize, delta: f64) -> Result<f64, NnError> {
        if self.base.is_none() {
            self.base = Some(self.forward().map_err(nn_err)?);
        }
        let original = self.model.params()[tensor][index];
        self.model.params_mut()[tensor][index] = original + delta;
        let loss = self.eval(tensor, index);
        self.model.params_mut()[tensor][index] = original;
        loss.map_err(nn_err)
    }
}

/// Checks every parameter of `model` on a fixed batch.
pub fn check_model_gradients(
    model: &CswModel,
    inputs: Vec<Tensor2>,
    labels: Vec<f64>,
    lambda: f64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NnError> {
    let mut obj = CswObjective::new(model.clone(), inputs, labels, lambda, BnMode::Train, None);
    grad_check(&mut obj, step, tolerance)
}
