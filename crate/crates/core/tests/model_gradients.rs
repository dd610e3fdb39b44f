use cswsteg::model::{check_model_gradients, ArchConfig, CswModel};
use cswsteg::nn::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(n: usize, batch: usize, seed: u64) -> Vec<Tensor2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch)
        .map(|_| Tensor2::from_fn(n, 3, |_, _| rng.gen::<f64>()))
        .collect()
}

#[test]
fn small_model_gradients() {
    let cfg = ArchConfig {
        conv1_kernels: 6,
        conv2_kernels: 5,
        skip_rows: 4,
        fused_dim: 7,
        ..ArchConfig::default()
    };
    let model = CswModel::build(cfg, 3).unwrap();
    let t = std::time::Instant::now();
    let r = check_model_gradients(&model, random_batch(20, 4, 1), vec![1.0, 0.0, 1.0, 0.0], 1e-3, 1e-5, 1e-4).unwrap();
    for c in &r.tensors {
        println!("{:28} n={:6} max_rel={:.3e} a={:.4e} n={:.4e}", c.name, c.checked, c.max_rel_error, c.analytic, c.numeric);
    }
    println!("{:?}", t.elapsed());
    assert!(r.passed());
}
