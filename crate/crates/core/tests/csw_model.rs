use cswsteg::codeword::{normalize, DEFAULT_CODEBOOK_SIZES};
use cswsteg::model::{decide, load, load_expecting, save, ArchConfig, CheckpointMetadata, CswModel, ModelError, Verdict};
use cswsteg::nn::BnMode;
use cswsteg::train::random_clip;

/// Spliced dimension recomputed from channel and skip counts.
fn m_formula(channels: usize, last_kernels: usize, k_conv: usize, skip_rows: usize, k_skip: usize) -> usize {
    channels * last_kernels * k_conv + skip_rows * k_skip
}

fn small() -> ArchConfig {
    ArchConfig {
        conv1_kernels: 6,
        conv2_kernels: 4,
        skip_rows: 5,
        fused_dim: 7,
        ..ArchConfig::default()
    }
}

#[test]
fn default_dimensions() {
    let model = CswModel::build(ArchConfig::default(), 0).unwrap();
    assert_eq!(model.spliced_dim(), m_formula(3, 64, 2, 64, 1));
    assert_eq!(model.spliced_dim(), 448);
    assert_eq!(model.fused_dim(), 64);
    assert_eq!(model.min_clip_len(), 12);
}

#[test]
fn ablation_dimensions_follow_formula() {
    let m = |v| CswModel::build(ArchConfig::ablation(v).unwrap(), 0).unwrap().spliced_dim();
    assert_eq!(m('b'), m_formula(3, 64, 2, 0, 1));
    assert_eq!(m('b'), 384);
    assert_eq!(m('c'), m_formula(3, 64, 1, 64, 1));
    assert_eq!(m('e'), m_formula(3, 64, 3, 64, 3));
    assert_eq!(m('f'), m_formula(3, 64, 2, 64, 1));
    assert_eq!(m('j'), m_formula(2, 64, 2, 64, 1));
    assert_eq!(m('j'), 320);
    assert!(ArchConfig::ablation('z').is_err());
}

#[test]
fn channel_three_shapes_at_thousand_frames() {
    let model = CswModel::build(ArchConfig::default(), 0).unwrap();
    assert_eq!(model.path_lengths(2, 1000), vec![1000 - 5 + 1, 1000 - 5 + 1 - 7 + 1]);
    assert_eq!(model.paths[2].out_features(), 128);
}

#[test]
fn zeroed_model_gives_half_and_zero_features() {
    let mut model = CswModel::build(small(), 3).unwrap();
    model.zero_parameters();
    for seed in 0..5 {
        let clip = normalize(&random_clip(40, DEFAULT_CODEBOOK_SIZES, seed));
        let (y, o) = model.forward(&clip, BnMode::Infer).unwrap();
        assert_eq!(y, 0.5);
        assert!(o.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn short_clip_is_rejected() {
    let model = CswModel::build(ArchConfig::default(), 0).unwrap();
    let clip = random_clip(11, DEFAULT_CODEBOOK_SIZES, 0);
    assert!(matches!(
        model.predict(&clip, 0.5),
        Err(ModelError::ClipTooShort { frames: 11, minimum: 12 })
    ));
    let short = CswModel::build(ArchConfig::short_clip(), 0).unwrap();
    assert!(short.predict(&random_clip(10, DEFAULT_CODEBOOK_SIZES, 0), 0.5).is_ok());
}

#[test]
fn threshold_boundaries() {
    assert_eq!(decide(0.7, 0.5), Verdict::Stego);
    assert_eq!(decide(0.5, 0.5), Verdict::Stego);
    assert_eq!(decide(0.49, 0.5), Verdict::Cover);
    let model = CswModel::build(small(), 1).unwrap();
    assert!(model.predict(&random_clip(30, DEFAULT_CODEBOOK_SIZES, 0), 1.0).is_err());
}

#[test]
fn raising_threshold_never_turns_cover_into_stego() {
    let model = CswModel::build(small(), 2).unwrap();
    for seed in 0..10 {
        let clip = random_clip(30, DEFAULT_CODEBOOK_SIZES, seed);
        let mut was_cover = false;
        for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let v = model.predict(&clip, t).unwrap().verdict;
            assert!(!(was_cover && v == Verdict::Stego));
            was_cover |= v == Verdict::Cover;
        }
    }
}

#[test]
fn inference_is_deterministic_and_seeded() {
    let a = CswModel::build(small(), 9).unwrap();
    let b = CswModel::build(small(), 9).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, CswModel::build(small(), 10).unwrap());
    let clip = random_clip(50, DEFAULT_CODEBOOK_SIZES, 4);
    assert_eq!(a.predict(&clip, 0.5).unwrap(), a.predict(&clip, 0.5).unwrap());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let model = CswModel::build(small(), 5).unwrap();
    let meta = CheckpointMetadata {
        epoch: Some(3),
        ..Default::default()
    };
    save(&model, &meta, &path).unwrap();
    let (loaded, loaded_meta) = load(&path).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(loaded_meta, meta);
    for seed in 0..10 {
        let clip = random_clip(60, DEFAULT_CODEBOOK_SIZES, seed);
        let p = model.predict(&clip, 0.5).unwrap().probability;
        assert_eq!(p.to_bits(), loaded.predict(&clip, 0.5).unwrap().probability.to_bits());
    }
}

#[test]
fn checkpoint_with_other_architecture_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save(&CswModel::build(small(), 5).unwrap(), &Default::default(), &path).unwrap();
    assert!(matches!(
        load_expecting(&path, &ArchConfig::default()),
        Err(ModelError::ArchMismatch { .. })
    ));
    assert!(load_expecting(&path, &small()).is_ok());
}

#[test]
fn truncated_checkpoints_fail_with_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    save(&CswModel::build(small(), 5).unwrap(), &Default::default(), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let cut_path = dir.path().join("cut.json");
    for cut in (0..bytes.len() - 2).step_by(97) {
        std::fs::write(&cut_path, &bytes[..cut]).unwrap();
        assert!(matches!(load(&cut_path), Err(ModelError::Format(_))), "cut at {cut}");
    }
}
