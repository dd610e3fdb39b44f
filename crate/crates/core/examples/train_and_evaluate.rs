//! Trains a narrow detector on a small synthetic dataset, evaluates it on
//! the held-out split and round-trips the checkpoint.

use std::error::Error;

use cswsteg::dataset::{generate_samples, DatasetConfig, Split};
use cswsteg::model::{self, ArchConfig, CswModel};
use cswsteg::train::{evaluate, train, HyperParams};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let data = generate_samples(&DatasetConfig::new(vec![1000], vec![1.0], 400, 0.1))?;
    let (train_set, test_set): (Vec<_>, Vec<_>) = data.into_iter().partition(|s| s.split == Split::Train);

    let config = ArchConfig {
        conv1_kernels: 32,
        conv2_kernels: 16,
        ..ArchConfig::default()
    };
    let hyper = HyperParams {
        epochs: 12,
        patience: 0,
        batch_size: 16,
        lr: 0.003,
        dropout: 0.0,
        ..HyperParams::default()
    };
    let model = CswModel::build(config, hyper.seed)?;
    let outcome = train(model, &train_set, &hyper, |r| {
        println!(
            "epoch {}: loss {:.4}, validation accuracy {:.3} ({:.1}s)",
            r.epoch,
            r.train_loss_mean,
            r.validation_accuracy.unwrap_or(f64::NAN),
            r.seconds
        );
    })?;
    println!("kept epoch {}", outcome.history.best_epoch);

    let report = evaluate(&outcome.model, &test_set, 0.5)?;
    println!(
        "test: accuracy {:.3}, TP {} TN {} FP {} FN {}",
        report.accuracy, report.tp, report.tn, report.fp, report.fn_
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("detector.json");
    model::save(&outcome.model, &outcome.metadata, &path)?;
    let (restored, meta) = model::load(&path)?;
    assert_eq!(evaluate(&restored, &test_set, 0.5)?, report);
    println!("checkpoint restored (epoch {:?}), identical report", meta.epoch);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
