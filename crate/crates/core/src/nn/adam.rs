use serde::{Deserialize, Serialize};

use super::NnError;

/// Adam optimizer state for an ordered list of parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zeroed moments shaped like `shapes` (one length per tensor).
    pub fn new(lr: f64, shapes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn tensors(&self) -> usize {
        self.first.len()
    }
}

/// One bias-corrected Adam update. Gradients are checked for finiteness
/// before anything is modified.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    state: &mut AdamState,
) -> Result<(), NnError> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} parameter tensors, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first[i].len() {
            return Err(NnError::ShapeMismatch(format!(
                "tensor {i}: {} params, {} grads",
                p.len(),
                g.len()
            )));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteGradient {
                tensor: i,
                index: j,
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_only_ticks() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(0.001, &[2]);
        adam_step(&mut [&mut p[..]], &[vec![0.0, 0.0]], &mut st).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(0.001, &[1]);
        adam_step(&mut [&mut p[..]], &[vec![1.0]], &mut st).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn rejects_nan_and_bad_shapes() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(0.001, &[1]);
        assert!(matches!(
            adam_step(&mut [&mut p[..]], &[vec![f64::NAN]], &mut st),
            Err(NnError::NonFiniteGradient { tensor: 0, index: 0 })
        ));
        assert_eq!(st.t, 0);
        assert!(adam_step(&mut [&mut p[..]], &[vec![0.0, 1.0]], &mut st).is_err());
    }
}
