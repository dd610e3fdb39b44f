//! Builds a small labeled dataset on disk and reloads its train split
//! through the manifest.

use std::error::Error;

use cswsteg::dataset::{build_dataset, load_split, DatasetConfig, Label, Selection, Split};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = tempfile::tempdir()?;
    let mut config = DatasetConfig::new(vec![50, 200], vec![0.5, 1.0], 20, 0.1);
    config.out_dir = dir.path().to_path_buf();
    let manifest = build_dataset(&config)?;
    println!("{} clips written to {}", manifest.entries.len(), dir.path().display());

    for len in &config.clip_lengths_frames {
        for rate in &config.embedding_rates {
            let sel = |split| Selection {
                split: Some(split),
                clip_len: Some(*len),
                group_rate: Some(*rate),
            };
            println!(
                "  {len:>4} frames, rate {rate:.1}: {} train / {} test",
                manifest.count(&sel(Split::Train)),
                manifest.count(&sel(Split::Test))
            );
        }
    }

    let train = load_split(dir.path().join("manifest.json"), &Selection::split(Split::Train))?;
    let stego = train.iter().filter(|s| s.label == Label::Stego).count();
    println!("reloaded {} train clips ({stego} stego)", train.len());
    println!("first entry: {}", serde_json::to_string(&manifest.entries[0])?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
