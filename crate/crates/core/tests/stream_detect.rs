use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::Duration;

use cswsteg::codeword::{encode_container, slice_clips, CodewordClip, DEFAULT_CODEBOOK_SIZES, FRAME_LEN, HEADER_LEN};
use cswsteg::model::{save, ArchConfig, CswModel};
use cswsteg::stream::{detect_clip, sliding_detect, DetectError, DetectorSettings, FrameSource};
use cswsteg::train::random_clip;

fn small_model(seed: u64) -> CswModel {
    let arch = ArchConfig {
        conv1_kernels: 8,
        conv2_kernels: 6,
        skip_rows: 6,
        fused_dim: 8,
        ..ArchConfig::default()
    };
    CswModel::build(arch, seed).unwrap()
}

fn source(bytes: Vec<u8>) -> FrameSource {
    FrameSource::from_reader(Box::new(std::io::Cursor::new(bytes)), None).unwrap()
}

fn settings(window: usize, hop: usize) -> DetectorSettings {
    DetectorSettings {
        window,
        hop,
        threshold: 0.5,
    }
}

#[test]
fn well_formed_file_yields_every_frame() {
    let clip = random_clip(100, DEFAULT_CODEBOOK_SIZES, 1);
    let frames: Vec<_> = source(encode_container(&clip)).map(Result::unwrap).collect();
    assert_eq!(frames, clip.frames);
}

#[test]
fn empty_input_ends_cleanly() {
    assert_eq!(source(Vec::new()).count(), 0);
}

#[test]
fn corrupt_frame_fifty_stops_after_fifty_frames() {
    let clip = random_clip(100, DEFAULT_CODEBOOK_SIZES, 2);
    let mut bytes = encode_container(&clip);
    let at = HEADER_LEN + 50 * FRAME_LEN;
    bytes[at..at + 2].copy_from_slice(&u16::MAX.to_le_bytes());
    let items: Vec<_> = source(bytes).collect();
    assert_eq!(items.len(), 51);
    assert!(items[..50].iter().all(Result::is_ok));
    assert!(matches!(items[50], Err(DetectError::Stream(_))));
}

#[test]
fn window_counts_follow_emission_rule() {
    let model = small_model(1);
    let clip = random_clip(1000, DEFAULT_CODEBOOK_SIZES, 3);
    assert_eq!(detect_clip(&clip, &model, &settings(1000, 1000)).unwrap().len(), 1);
    let events = detect_clip(&clip, &model, &settings(100, 50)).unwrap();
    assert_eq!(events.len(), 19);
    for (k, e) in events.iter().enumerate() {
        assert_eq!((e.start, e.end), (50 * k, 50 * k + 100));
        assert!(e.latency_ms >= 0.0);
    }
}

#[test]
fn first_window_matches_sliced_clip() {
    let model = small_model(2);
    let clip = random_clip(700, DEFAULT_CODEBOOK_SIZES, 4);
    let events = detect_clip(&clip, &model, &settings(200, 100)).unwrap();
    let first = &slice_clips(&clip, 200).unwrap()[0];
    assert_eq!(events[0].p, model.predict(first, 0.5).unwrap().probability);
}

#[test]
fn stream_errors_are_reported_after_complete_windows() {
    let model = small_model(3);
    let clip = random_clip(100, DEFAULT_CODEBOOK_SIZES, 5);
    let mut bytes = encode_container(&clip);
    let at = HEADER_LEN + 50 * FRAME_LEN;
    bytes[at..at + 2].copy_from_slice(&u16::MAX.to_le_bytes());
    let mut events = Vec::new();
    let result = sliding_detect(source(bytes), DEFAULT_CODEBOOK_SIZES, &model, &settings(20, 10), |e| {
        events.push(e)
    });
    assert!(result.is_err());
    assert_eq!(events.len(), 4);
}

#[test]
fn window_below_model_minimum_is_rejected() {
    let model = small_model(4);
    let clip = random_clip(100, DEFAULT_CODEBOOK_SIZES, 5);
    assert!(detect_clip(&clip, &model, &settings(11, 1)).is_err());
    assert!(detect_clip(&clip, &model, &settings(12, 0)).is_err());
}

#[test]
fn silent_source_times_out() {
    struct Silent;
    impl Read for Silent {
        fn read(&mut self, _: &mut [u8]) -> std::io::Result<usize> {
            std::thread::sleep(Duration::from_secs(5));
            Ok(0)
        }
    }
    let result = FrameSource::from_reader(Box::new(Silent), Some(Duration::from_millis(50)));
    assert!(matches!(result, Err(DetectError::IdleTimeout(_))));
}

#[test]
fn tcp_source_delivers_frames() {
    let clip = random_clip(120, DEFAULT_CODEBOOK_SIZES, 6);
    let bytes = encode_container(&clip);
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let sender = std::thread::spawn(move || {
        let mut s = std::net::TcpStream::connect(addr).unwrap();
        for chunk in bytes.chunks(37) {
            s.write_all(chunk).unwrap();
        }
    });
    let (conn, _) = listener.accept().unwrap();
    let src = FrameSource::from_reader(Box::new(conn), Some(Duration::from_secs(10))).unwrap();
    let frames: Vec<_> = src.map(Result::unwrap).collect();
    sender.join().unwrap();
    assert_eq!(frames, clip.frames);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cswsteg"))
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = cli().args(["eval", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_model_is_an_operational_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .args(["bench", "--model"])
        .arg(dir.path().join("absent.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let config = dir.path().join("dataset.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "clip_lengths_frames": [30],
            "embedding_rates": [1.0],
            "n_per_class": 10,
            "alpha": 0.1,
            "out_dir": data,
        })
        .to_string(),
    )
    .unwrap();
    let arch = dir.path().join("arch.json");
    std::fs::write(
        &arch,
        serde_json::json!({"conv1_kernels": 6, "conv2_kernels": 4, "skip_rows": 4, "fused_dim": 6}).to_string(),
    )
    .unwrap();
    let status = cli().args(["gen", "--config"]).arg(&config).arg("--seed").arg("3").status().unwrap();
    assert!(status.success());
    let manifest = data.join("manifest.json");
    let model = dir.path().join("model.json");
    let status = cli()
        .args(["train", "--manifest"])
        .arg(&manifest)
        .arg("--config")
        .arg(&arch)
        .args(["--epochs", "2", "--batch-size", "4", "--seed", "1", "--out"])
        .arg(&model)
        .status()
        .unwrap();
    assert!(status.success());
    let out = cli().args(["eval", "--model"]).arg(&model).arg("--manifest").arg(&manifest).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let accuracy = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&accuracy));
    assert_eq!(report["tp"].as_u64().unwrap() + report["tn"].as_u64().unwrap() + report["fp"].as_u64().unwrap()
        + report["fn"].as_u64().unwrap(), 4);
}

#[test]
fn detect_writes_ndjson_events() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("m.json");
    let model = small_model(7);
    save(&model, &Default::default(), &model_path).unwrap();
    let clip: CodewordClip = random_clip(3000, DEFAULT_CODEBOOK_SIZES, 8);
    let mut child = cli()
        .args(["detect", "--model"])
        .arg(&model_path)
        .args(["--window", "1000", "--hop", "500"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&encode_container(&clip)).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 5);
    for (k, e) in lines.iter().enumerate() {
        assert_eq!(e["start"].as_u64(), Some(500 * k as u64));
        assert_eq!(e["end"].as_u64(), Some(500 * k as u64 + 1000));
        for field in ["p", "verdict", "latency_ms", "ts"] {
            assert!(e.get(field).is_some(), "missing {field}");
        }
        let window = clip.window(500 * k, 500 * k + 1000);
        assert_eq!(e["p"].as_f64().unwrap(), model.predict(&window, 0.5).unwrap().probability);
    }
}
