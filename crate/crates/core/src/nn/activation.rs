use super::Tensor2;

pub fn relu(t: &Tensor2) -> Tensor2 {
    let mut out = t.clone();
    relu_inplace(out.as_mut_slice());
    out
}

pub fn relu_inplace(values: &mut [f64]) {
    for v in values {
        *v = v.max(0.0);
    }
}

/// Zeroes `grad` wherever the activation output was not positive.
pub fn relu_backward_inplace(activated: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
