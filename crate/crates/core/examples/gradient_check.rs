//! Compares the network's analytic gradients with central finite
//! differences on a narrow model and prints the per-tensor worst error.

use std::error::Error;

use cswsteg::model::{check_model_gradients, ArchConfig, CswModel};
use cswsteg::nn::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let config = ArchConfig {
        conv1_kernels: 4,
        conv2_kernels: 3,
        skip_rows: 3,
        fused_dim: 5,
        ..ArchConfig::default()
    };
    let model = CswModel::build(config, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs: Vec<Tensor2> = (0..4).map(|_| Tensor2::from_fn(16, 3, |_, _| rng.gen())).collect();
    let labels = vec![0.0, 1.0, 1.0, 0.0];

    let report = check_model_gradients(&model, inputs, labels, 1e-3, 1e-5, 1e-4)?;
    for t in &report.tensors {
        println!("{:<24} n={:<5} max rel error {:.2e}", t.name, t.checked, t.max_rel_error);
    }
    println!("passed: {}", report.passed());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
