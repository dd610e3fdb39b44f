use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, MatRef};
use super::{NnError, Tensor2};

/// Affine map `o_j = Σ_i w_{i,j} · z_i + b_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    inputs: usize,
    outputs: usize,
    /// `inputs × outputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(inputs: usize, outputs: usize) -> Result<Self, NnError> {
        if inputs == 0 || outputs == 0 {
            return Err(NnError::ShapeMismatch(format!(
                "dense layer needs positive sizes ({inputs} -> {outputs})"
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        })
    }

    /// Uniform weights in ±sqrt(6 / fan_in), zero bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Result<Self, NnError> {
        let mut p = Self::zeros(inputs, outputs)?;
        let bound = (6.0 / inputs as f64).sqrt();
        for w in &mut p.weights {
            *w = rng.gen_range(-bound..bound);
        }
        Ok(p)
    }

    pub fn from_parts(
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, NnError> {
        if weights.len() != inputs * outputs || bias.len() != outputs {
            return Err(NnError::ShapeMismatch(format!(
                "{} weights / {} biases for a {inputs}x{outputs} layer",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    /// Row-batched forward: `x` is `batch × inputs`.
    pub fn forward_batch(&self, x: &Tensor2) -> Result<Tensor2, NnError> {
        if x.cols() != self.inputs {
            return Err(NnError::ShapeMismatch(format!(
                "input width {} != dense inputs {}",
                x.cols(),
                self.inputs
            )));
        }
        let mut out = Tensor2::zeros(x.rows(), self.outputs);
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(
            x.rows(),
            self.inputs,
            self.outputs,
            MatRef::dense(x.as_slice(), self.inputs),
            MatRef::dense(&self.weights, self.outputs),
            1.0,
            out.as_mut_slice(),
            self.outputs,
        );
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns dL/dx.
    pub fn backward_batch(
        &self,
        x: &Tensor2,
        grad_out: &Tensor2,
        grad_weights: &mut [f64],
        grad_bias: &mut [f64],
    ) -> Result<Tensor2, NnError> {
        if x.cols() != self.inputs || grad_out.shape() != (x.rows(), self.outputs) {
            return Err(NnError::ShapeMismatch(format!(
                "dense backward: x {:?}, grad {:?}, layer {}x{}",
                x.shape(),
                grad_out.shape(),
                self.inputs,
                self.outputs
            )));
        }
        for r in 0..grad_out.rows() {
            for (g, d) in grad_bias.iter_mut().zip(grad_out.row(r)) {
                *g += d;
            }
        }
        gemm(
            self.inputs,
            x.rows(),
            self.outputs,
            MatRef::dense_t(x.as_slice(), self.inputs),
            MatRef::dense(grad_out.as_slice(), self.outputs),
            1.0,
            grad_weights,
            self.outputs,
        );
        let mut grad_in = Tensor2::zeros(x.rows(), self.inputs);
        gemm(
            x.rows(),
            self.outputs,
            self.inputs,
            MatRef::dense(grad_out.as_slice(), self.outputs),
            MatRef::dense_t(&self.weights, self.outputs),
            0.0,
            grad_in.as_mut_slice(),
            self.inputs,
        );
        Ok(grad_in)
    }
}

/// Single-vector forward.
pub fn dense(input: &[f64], params: &DenseParams) -> Result<Vec<f64>, NnError> {
    let x = Tensor2::from_vec(1, input.len(), input.to_vec())?;
    Ok(params.forward_batch(&x)?.into_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_bias_only() {
        let mut eye = DenseParams::zeros(3, 3).unwrap();
        for i in 0..3 {
            eye.weights[i * 3 + i] = 1.0;
        }
        assert_eq!(dense(&[1.5, -2.0, 0.25], &eye).unwrap(), vec![1.5, -2.0, 0.25]);

        let mut b = DenseParams::zeros(2, 3).unwrap();
        b.bias = vec![0.1, 0.2, 0.3];
        assert_eq!(dense(&[9.0, -9.0], &b).unwrap(), vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn small_product() {
        let p = DenseParams::from_parts(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(dense(&[1.0, 1.0], &p).unwrap(), vec![4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch() {
        let p = DenseParams::zeros(2, 2).unwrap();
        assert!(matches!(dense(&[1.0], &p), Err(NnError::ShapeMismatch(_))));
        assert!(DenseParams::from_parts(2, 2, vec![0.0; 3], vec![0.0; 2]).is_err());
    }
}
