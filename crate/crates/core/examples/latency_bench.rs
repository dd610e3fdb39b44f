//! Times single-clip inference of the full model and of the short-clip
//! configuration at several clip lengths.

use std::error::Error;

use cswsteg::model::{ArchConfig, CswModel};
use cswsteg::train::bench_latency;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let reps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let full = CswModel::build(ArchConfig::default(), 0)?;
    let short = CswModel::build(ArchConfig::short_clip(), 0)?;
    for (name, model, lengths) in [
        ("full", &full, vec![100, 1000]),
        ("short-clip", &short, vec![10, 100]),
    ] {
        let report = bench_latency(model, &lengths, reps, 5, 0)?;
        for e in &report.entries {
            println!(
                "{name:<10} {:>5} frames: median {:.3} ms, mean {:.3} ± {:.3} ms over {} runs",
                e.frames, e.median_ms, e.mean_ms, e.sd_ms, e.samples
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
