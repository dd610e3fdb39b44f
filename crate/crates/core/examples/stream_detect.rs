//! Runs the sliding-window detector over a recorded stream that switches
//! from cover to stego halfway, then checks each event against a direct
//! prediction on the same window.

use std::error::Error;
use std::fs::File;
use std::io::BufReader;

use cswsteg::codeword::{write_container, CodewordClip, DEFAULT_CODEBOOK_SIZES};
use cswsteg::model::{ArchConfig, CswModel};
use cswsteg::qim::{gen_cover, qim_embed, random_bits, CoverModel, QimKey};
use cswsteg::stream::{sliding_detect, DetectorSettings, FrameSource};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let cover_model = CoverModel::dirichlet(DEFAULT_CODEBOOK_SIZES, 0.1, 2)?;
    let key = QimKey::generate(DEFAULT_CODEBOOK_SIZES, 3, 1)?;
    let first = gen_cover(&cover_model, 300, 10);
    let second = gen_cover(&cover_model, 300, 11);
    let stego = qim_embed(&second, &random_bits(900, 12), 1.0, &key, 13)?.stego;
    let mut frames = first.frames.clone();
    frames.extend_from_slice(&stego.frames);
    let stream = CodewordClip::new(frames, DEFAULT_CODEBOOK_SIZES)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("call.cwst");
    write_container(&stream, &path)?;

    let model = CswModel::build(ArchConfig::default(), 0)?;
    let settings = DetectorSettings {
        window: 100,
        hop: 50,
        threshold: 0.5,
    };
    let source = FrameSource::from_reader(Box::new(BufReader::new(File::open(&path)?)), None)?;
    let sizes = source.codebook_sizes().unwrap_or(DEFAULT_CODEBOOK_SIZES);
    let mut events = Vec::new();
    let summary = sliding_detect(source, sizes, &model, &settings, |e| {
        println!("{}", serde_json::to_string(&e).expect("event serializes"));
        events.push(e);
    })?;
    println!("{} frames, {} events", summary.frames, summary.events);

    for e in &events {
        let direct = model.predict(&stream.window(e.start, e.end), settings.threshold)?;
        assert_eq!(direct.probability, e.p);
    }
    println!("every event matches a standalone prediction exactly");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
