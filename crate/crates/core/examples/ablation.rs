//! Trains each model-setting variant on the same small dataset and prints
//! a comparison table.

use std::error::Error;

use cswsteg::dataset::{generate_samples, DatasetConfig, Split};
use cswsteg::model::ArchConfig;
use cswsteg::train::{ablation_study, ablation_table, HyperParams};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let data = generate_samples(&DatasetConfig::new(vec![100], vec![1.0], 60, 0.1))?;
    let (train_set, test_set): (Vec<_>, Vec<_>) = data.into_iter().partition(|s| s.split == Split::Train);
    let base = ArchConfig {
        conv1_kernels: 8,
        conv2_kernels: 4,
        skip_rows: 8,
        fused_dim: 8,
        ..ArchConfig::default()
    };
    let hyper = HyperParams {
        epochs: 3,
        batch_size: 16,
        lr: 0.003,
        ..HyperParams::default()
    };
    let variants: Vec<char> = "abcdefghij".chars().collect();
    let rows = ablation_study(&base, &variants, &train_set, &test_set, &hyper, |_| {})?;
    print!("{}", ablation_table(&rows));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
