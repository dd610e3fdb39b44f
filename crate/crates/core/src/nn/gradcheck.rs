//! Central finite-difference gradient checking.

use serde::Serialize;

use super::NnError;

/// A scalar loss over named parameter tensors whose analytic gradient is
/// available.
pub trait Objective {
    fn tensor_names(&self) -> Vec<String>;
    fn tensor_len(&self, tensor: usize) -> usize;
    /// Analytic gradient for every tensor, in `tensor_names` order.
    fn gradients(&mut self) -> Result<Vec<Vec<f64>>, NnError>;
    /// Loss with parameter `(tensor, index)` shifted by `delta`. The
    /// parameter must be restored before returning.
    fn perturbed_loss(&mut self, tensor: usize, index: usize, delta: f64) -> Result<f64, NnError>;
}

#[derive(Clone, Debug, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_error <= self.tolerance)
    }

    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| t.max_rel_error > self.tolerance)
            .collect()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

/// Magnitudes below this are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 2e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Checks every parameter of every tensor.
pub fn grad_check<O: Objective + ?Sized>(
    objective: &mut O,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NnError> {
    grad_check_with(objective, step, tolerance, |_, _| true)
}

/// Checks the parameters accepted by `select(tensor, index)`.
pub fn grad_check_with<O: Objective + ?Sized>(
    objective: &mut O,
    step: f64,
    tolerance: f64,
    mut select: impl FnMut(usize, usize) -> bool,
) -> Result<GradCheckReport, NnError> {
    let analytic = objective.gradients()?;
    let names = objective.tensor_names();
    let mut tensors = Vec::with_capacity(names.len());
    for (t, name) in names.into_iter().enumerate() {
        let mut check = TensorCheck {
            name,
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..objective.tensor_len(t) {
            if !select(t, i) {
                continue;
            }
            let plus = objective.perturbed_loss(t, i, step)?;
            let minus = objective.perturbed_loss(t, i, -step)?;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic[t][i], numeric);
            check.checked += 1;
            if err > check.max_rel_error || check.checked == 1 {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = analytic[t][i];
                check.numeric = numeric;
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport {
        step,
        tolerance,
        tensors,
    })
}
