//! Writes a codeword stream to a `.cwst` container, reads it back, slices it
//! into fixed-length clips and prints the normalized network input.

use std::error::Error;

use cswsteg::codeword::{
    normalize, read_container, read_sidecar, slice_clips, write_container, write_sidecar, ClipMetadata,
    CodewordClip, CodewordFrame, DEFAULT_CODEBOOK_SIZES,
};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let frames: Vec<CodewordFrame> = (0..25u16)
        .map(|i| CodewordFrame::new((i * 5) % 128, i % 32, (31 - i % 32) % 32))
        .collect();
    let stream = CodewordClip::new(frames, DEFAULT_CODEBOOK_SIZES)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("stream.cwst");
    let bytes = write_container(&stream, &path)?;
    write_sidecar(
        &path,
        &ClipMetadata {
            label: Some("cover".into()),
            ..Default::default()
        },
    )?;
    println!("wrote {} frames in {bytes} bytes", stream.len());

    let back = read_container(&path)?;
    assert_eq!(back, stream);
    println!("sidecar label: {:?}", read_sidecar(&path)?.and_then(|m| m.label));

    let clips = slice_clips(&back, 10)?;
    println!("{} clips of 10 frames (5 trailing frames dropped)", clips.len());

    let x = normalize(&clips[0]);
    for j in 0..3 {
        let shown: Vec<String> = x.matrix.row(j).iter().take(5).map(|v| format!("{v:.3}")).collect();
        println!("slot {}: {} ...", j + 1, shown.join(" "));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
