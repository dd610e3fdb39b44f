//! Exports the fused feature vector of every clip as CSV, ready for an
//! external projection tool.

use std::error::Error;

use cswsteg::dataset::{generate_samples, DatasetConfig};
use cswsteg::model::{ArchConfig, CswModel};
use cswsteg::train::export_features_to_file;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let samples = generate_samples(&DatasetConfig::new(vec![100], vec![0.5, 1.0], 10, 0.1))?;
    let model = CswModel::build(ArchConfig::default(), 1)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("features.csv");
    let rows = export_features_to_file(&model, &samples, &path)?;

    let text = std::fs::read_to_string(&path)?;
    let header = text.lines().next().unwrap_or_default();
    println!("{rows} rows, {} columns", header.split(',').count());
    for line in text.lines().take(3) {
        let cells: Vec<&str> = line.split(',').take(5).collect();
        println!("{} ...", cells.join(","));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
