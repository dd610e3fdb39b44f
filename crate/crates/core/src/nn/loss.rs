//! Binary cross-entropy with an L2-norm penalty.

use super::NnError;

pub const PROB_CLAMP: f64 = 1e-7;

fn clamp_prob(y: f64) -> f64 {
    y.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

fn l2_norm(w: &[f64]) -> f64 {
    w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check(predictions: &[f64], labels: &[f64]) -> Result<(), NnError> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(NnError::ShapeMismatch(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    for &y in predictions {
        if !(0.0..=1.0).contains(&y) || y.is_nan() {
            return Err(NnError::DomainError(y));
        }
    }
    Ok(())
}

/// Mean binary cross-entropy of `predictions` against 0/1 `labels`, with
/// probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce(predictions: &[f64], labels: &[f64]) -> Result<f64, NnError> {
    check(predictions, labels)?;
    let n = predictions.len() as f64;
    let sum: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&y, &t)| {
            let y = clamp_prob(y);
            t * y.ln() + (1.0 - t) * (1.0 - y).ln()
        })
        .sum();
    Ok(-sum / n)
}

/// `bce + λ · Σ ‖W‖₂` over the regularized tensors.
pub fn bce_l2_loss(
    predictions: &[f64],
    labels: &[f64],
    reg_weights: &[&[f64]],
    lambda: f64,
) -> Result<f64, NnError> {
    let penalty: f64 = reg_weights.iter().map(|w| l2_norm(w)).sum();
    Ok(bce(predictions, labels)? + lambda * penalty)
}

/// dL/dlogit for a sigmoid output feeding the cross-entropy term. Inside the
/// clamp band this is `(y - t) / N`; in the saturated band the clamped
/// probability is constant and the gradient is zero.
pub fn bce_logit_grad(predictions: &[f64], labels: &[f64]) -> Vec<f64> {
    let n = predictions.len() as f64;
    predictions
        .iter()
        .zip(labels)
        .map(|(&y, &t)| {
            if y < PROB_CLAMP || y > 1.0 - PROB_CLAMP {
                0.0
            } else {
                (y - t) / n
            }
        })
        .collect()
}

/// Adds the gradient of `λ · ‖w‖₂` to `grad` (zero at the origin).
pub fn l2_norm_grad(w: &[f64], lambda: f64, grad: &mut [f64]) {
    let norm = l2_norm(w);
    if norm > 0.0 {
        for (g, v) in grad.iter_mut().zip(w) {
            *g += lambda * v / norm;
        }
    }
}
