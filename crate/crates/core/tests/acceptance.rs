//! One test per acceptance criterion. Each prints a single PASS/FAIL line
//! straight to the process's standard error, so the lines show up in the
//! test log whether or not output capture is on.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use cswsteg::codeword::{decode_container, encode_container, read_container, write_container, DEFAULT_CODEBOOK_SIZES};
use cswsteg::dataset::{generate_samples, DatasetConfig, LabeledClip, Split};
use cswsteg::model::{check_model_gradients, load, save, ArchConfig, CswModel};
use cswsteg::nn::pool::kmax_positions;
use cswsteg::nn::{conv_valid, ConvLayerParams, Tensor2};
use cswsteg::qim::{cnv_partition, gen_codebook, gen_cover, qim_embed, qim_extract, random_bits, CoverModel, QimKey};
use cswsteg::stream::{sliding_detect, DetectorSettings};
use cswsteg::train::{bench_latency, evaluate, random_clip, train, HyperParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {id:>2} {verdict}: {detail}");
}

fn random_inputs(n: usize, batch: usize, seed: u64) -> Vec<Tensor2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..batch).map(|_| Tensor2::from_fn(n, 3, |_, _| rng.gen::<f64>())).collect()
}

#[test]
fn criterion_01_gradient_check() {
    let t = Instant::now();
    let model = CswModel::build(ArchConfig::default(), 11).unwrap();
    let r = check_model_gradients(&model, random_inputs(20, 4, 2), vec![1.0, 0.0, 0.0, 1.0], 1e-3, 1e-5, 1e-4).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = r.passed() && secs < 120.0;
    report(
        1,
        pass,
        &format!("max relative error {:.2e} over {} tensors (limit 1e-4), {secs:.1}s (limit 120s)", r.max_rel_error(), r.tensors.len()),
    );
    assert!(pass);
}

/// Convolution written straight from the definition, on an
/// `in_features × positions` input.
fn naive_conv(x: &Tensor2, p: &ConvLayerParams) -> Vec<Vec<f64>> {
    let out_len = (x.cols() - p.width()) / p.stride() + 1;
    (0..out_len)
        .map(|pos| {
            (0..p.kernels())
                .map(|q| {
                    let mut acc = p.biases[q];
                    for r in 0..p.in_features() {
                        for s in 0..p.width() {
                            acc += p.kernel(q, r, s) * x.get(r, pos * p.stride() + s);
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

#[test]
fn criterion_02_convolution_oracle() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_f = rng.gen_range(1..8);
        let width = rng.gen_range(1..8);
        let kernels = rng.gen_range(1..10);
        let stride = rng.gen_range(1..3);
        let positions = width + rng.gen_range(0..40);
        let mut p = ConvLayerParams::init(in_f, width, kernels, stride, &mut rng).unwrap();
        p.biases.iter_mut().for_each(|b| *b = rng.gen_range(-1.0..1.0));
        let x = Tensor2::from_fn(in_f, positions, |_, _| rng.gen_range(-2.0..2.0));
        let got = conv_valid(&x, &p).unwrap();
        let want = naive_conv(&x, &p);
        assert_eq!(got.rows(), want.len());
        for (i, row) in want.iter().enumerate() {
            for (q, v) in row.iter().enumerate() {
                worst = worst.max((got.get(i, q) - v).abs());
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst <= 1e-12 && secs < 30.0;
    report(2, pass, &format!("100 cases, max abs difference {worst:.2e} (limit 1e-12), {secs:.2}s"));
    assert!(pass);
}

/// Top-k by a stable sort on descending value, then restored to input order.
fn brute_kmax(seq: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..seq.len()).collect();
    idx.sort_by(|&a, &b| seq[b].partial_cmp(&seq[a]).unwrap().then(a.cmp(&b)));
    let mut top = idx[..k].to_vec();
    top.sort_unstable();
    top
}

#[test]
fn criterion_03_kmax_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let len = rng.gen_range(1..30);
        let k = rng.gen_range(1..=len.min(4));
        // A small value alphabet forces plenty of ties.
        let seq: Vec<f64> = (0..len).map(|_| rng.gen_range(0..6) as f64).collect();
        if kmax_positions(&seq, k).unwrap() != brute_kmax(&seq, k) {
            mismatches += 1;
        }
    }
    report(3, mismatches == 0, &format!("1000 vectors, {mismatches} mismatches"));
    assert_eq!(mismatches, 0);
}

#[test]
fn criterion_04_qim_round_trip() {
    let key = QimKey::generate(DEFAULT_CODEBOOK_SIZES, 4, 1).unwrap();
    let model = CoverModel::dirichlet(DEFAULT_CODEBOOK_SIZES, 0.1, 2).unwrap();
    let mut failures = 0;
    let mut identity_failures = 0;
    for seed in 0..1000u64 {
        let cover = gen_cover(&model, 50, seed);
        let bits = random_bits(150, seed + 10_000);
        let rec = qim_embed(&cover, &bits, 1.0, &key, seed).unwrap();
        if qim_extract(&rec.stego, &rec.mask, &key).unwrap() != bits {
            failures += 1;
        }
        if qim_embed(&cover, &bits, 0.0, &key, seed).unwrap().stego != cover {
            identity_failures += 1;
        }
    }
    let pass = failures == 0 && identity_failures == 0;
    report(
        4,
        pass,
        &format!("1000 pairs: {failures} round-trip failures at rate 1.0, {identity_failures} changed clips at rate 0.0"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_cnv_property() {
    let mut violations = 0;
    let mut checked = 0;
    for (size, seed) in [(32, 5), (128, 6), (32, 7), (128, 8)] {
        let cb = gen_codebook(size, 4, seed).unwrap();
        let part = cnv_partition(&cb).unwrap();
        let (ones, zeros) = (part.class(true), part.class(false));
        let mut union: Vec<usize> = ones.iter().chain(&zeros).copied().collect();
        union.sort_unstable();
        if union != (0..size).collect::<Vec<_>>() || ones.iter().any(|i| zeros.contains(i)) {
            violations += 1;
        }
        for i in 0..size {
            let nearest = (0..size)
                .filter(|&j| j != i)
                .min_by(|&a, &b| cb.distance(i, a).partial_cmp(&cb.distance(i, b)).unwrap())
                .unwrap();
            violations += usize::from(part.label(i) == part.label(nearest));
            checked += 1;
        }
    }
    report(5, violations == 0, &format!("{checked} codewords over sizes 32/128, {violations} violations"));
    assert_eq!(violations, 0);
}

#[test]
fn criterion_06_dimensions() {
    let m = |v: char| CswModel::build(ArchConfig::ablation(v).unwrap(), 0).unwrap().spliced_dim();
    let default = CswModel::build(ArchConfig::default(), 0).unwrap();
    let got = (default.spliced_dim(), default.fused_dim(), m('b'), m('j'));
    let want = (3 * 64 * 2 + 64, 64, 3 * 64 * 2, 2 * 64 * 2 + 64);
    let pass = got == want && want.0 == 448;
    report(6, pass, &format!("|Z|={} |O|={} m(b)={} m(j)={}, expected {want:?}", got.0, got.1, got.2, got.3));
    assert!(pass);
}

/// Narrow detector used for every trained-accuracy criterion: the default
/// wiring with 32 first-layer and 16 second-layer kernels per channel.
fn detector_arch() -> ArchConfig {
    ArchConfig {
        conv1_kernels: 32,
        conv2_kernels: 16,
        ..ArchConfig::default()
    }
}

fn detector_hyper() -> HyperParams {
    HyperParams {
        lr: 0.003,
        batch_size: 16,
        dropout: 0.5,
        epochs: 3,
        patience: 0,
        seed: 1,
        ..HyperParams::default()
    }
}

/// Clips per class in the standard synthetic dataset: 20k train, 5k test.
const PER_CLASS: usize = 12_500;

/// Test accuracy of the standard training recipe for one (length, rate)
/// dataset, trained once and shared between criteria.
fn trained_accuracy(len: usize, rate: f64) -> f64 {
    static RESULTS: OnceLock<Mutex<HashMap<(usize, u64), f64>>> = OnceLock::new();
    let results = RESULTS.get_or_init(Default::default);
    let mut guard = results.lock().unwrap_or_else(|e| e.into_inner());
    let key = (len, rate.to_bits());
    if let Some(&acc) = guard.get(&key) {
        return acc;
    }
    let t = Instant::now();
    let samples = generate_samples(&DatasetConfig::new(vec![len], vec![rate], PER_CLASS, 0.1)).unwrap();
    let (train_set, test_set): (Vec<LabeledClip>, Vec<LabeledClip>) =
        samples.into_iter().partition(|s| s.split == Split::Train);
    assert_eq!((train_set.len(), test_set.len()), (20_000, 5_000));
    let model = CswModel::build(detector_arch(), 1).unwrap();
    let outcome = train(model, &train_set, &detector_hyper(), |r| {
        let _ = writeln!(
            std::io::stderr().lock(),
            "    len {len} rate {rate}: epoch {} validation {:.4} loss {:.4} ({:.0}s)",
            r.epoch,
            r.validation_accuracy.unwrap_or(f64::NAN),
            r.train_loss_mean,
            r.seconds
        );
    })
    .unwrap();
    let acc = evaluate(&outcome.model, &test_set, 0.5).unwrap().accuracy;
    let _ = writeln!(
        std::io::stderr().lock(),
        "    len {len} rate {rate}: test accuracy {acc:.4} after {:.0}s",
        t.elapsed().as_secs_f64()
    );
    guard.insert(key, acc);
    acc
}

#[test]
fn criterion_07_end_to_end_detection() {
    let t = Instant::now();
    let acc = trained_accuracy(1000, 1.0);
    let secs = t.elapsed().as_secs_f64();
    let pass = acc >= 0.95 && secs <= 1800.0;
    report(7, pass, &format!("test accuracy {acc:.4} (limit 0.95), {secs:.0}s (limit 1800s)"));
    assert!(pass);
}

/// Non-decreasing within `tol`.
fn monotone(values: &[f64], tol: f64) -> bool {
    values.windows(2).all(|w| w[1] >= w[0] - tol)
}

#[test]
fn criterion_08_rate_monotonicity() {
    let accs: Vec<f64> = [0.2, 0.5, 1.0].iter().map(|&r| trained_accuracy(1000, r)).collect();
    let pass = monotone(&accs, 0.02);
    report(8, pass, &format!("accuracy at rates 0.2/0.5/1.0 = {:.4}/{:.4}/{:.4} (tolerance 0.02)", accs[0], accs[1], accs[2]));
    assert!(pass);
}

#[test]
fn criterion_09_length_monotonicity() {
    let accs: Vec<f64> = [50, 200, 1000].iter().map(|&l| trained_accuracy(l, 1.0)).collect();
    let pass = monotone(&accs, 0.02);
    report(9, pass, &format!("accuracy at 50/200/1000 frames = {:.4}/{:.4}/{:.4} (tolerance 0.02)", accs[0], accs[1], accs[2]));
    assert!(pass);
}

#[test]
fn criterion_10_overfit() {
    let samples = generate_samples(&DatasetConfig::new(vec![100], vec![1.0], 32, 0.1)).unwrap();
    assert_eq!(samples.len(), 64);
    let hyper = HyperParams {
        epochs: 200,
        batch_size: 16,
        validation_fraction: 0.0,
        patience: 0,
        target_train_accuracy: Some(1.0),
        seed: 2,
        ..HyperParams::default()
    };
    let outcome = train(CswModel::build(ArchConfig::default(), 2).unwrap(), &samples, &hyper, |_| {}).unwrap();
    let epochs = outcome.history.epochs.len();
    let acc = evaluate(&outcome.model, &samples, 0.5).unwrap().accuracy;
    let pass = acc == 1.0;
    report(10, pass, &format!("train accuracy {acc:.4} after {epochs} epochs (limit 200)"));
    assert!(pass);
}

#[test]
fn criterion_11_latency() {
    let full = CswModel::build(ArchConfig::default(), 3).unwrap();
    let short = CswModel::build(ArchConfig::short_clip(), 3).unwrap();
    let r = bench_latency(&full, &[100, 1000], 100, 10, 0).unwrap();
    let s = bench_latency(&short, &[10], 100, 10, 0).unwrap();
    let t100 = r.entry(100).unwrap().median_ms;
    let t1000 = r.entry(1000).unwrap().median_ms;
    let t10 = s.entry(10).unwrap().median_ms;
    let ratio = t1000 / t100;
    let pass = t1000 < 50.0 && t10 < 5.0 && ratio <= 15.0;
    report(
        11,
        pass,
        &format!("median 1000 frames {t1000:.3} ms (limit 50), 10 frames {t10:.3} ms (limit 5), t1000/t100 {ratio:.2} (limit 15)"),
    );
    assert!(pass);
}

#[test]
fn criterion_12_stream_batch_equivalence() {
    let model = CswModel::build(ArchConfig::default(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = 0;
    let mut windows = 0;
    for s in 0..20u64 {
        let clip = random_clip(rng.gen_range(200..1500), DEFAULT_CODEBOOK_SIZES, s);
        let settings = DetectorSettings {
            window: rng.gen_range(12..200),
            hop: rng.gen_range(1..150),
            threshold: 0.5,
        };
        let mut events = Vec::new();
        sliding_detect(clip.frames.iter().copied().map(Ok), clip.codebook_sizes, &model, &settings, |e| {
            events.push(e)
        })
        .unwrap();
        let expected: Vec<f64> = (0..)
            .map(|k| k * settings.hop)
            .take_while(|start| start + settings.window <= clip.len())
            .map(|start| {
                let window = clip.window(start, start + settings.window);
                model.predict(&window, 0.5).unwrap().probability
            })
            .collect();
        windows += expected.len();
        if events.len() != expected.len() || events.iter().zip(&expected).any(|(e, p)| e.p.to_bits() != p.to_bits()) {
            mismatches += 1;
        }
    }
    report(12, mismatches == 0, &format!("20 streams, {windows} windows, {mismatches} streams differ"));
    assert_eq!(mismatches, 0);
}

#[test]
fn criterion_13_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let model = CswModel::build(ArchConfig::default(), 5).unwrap();
    let path = dir.path().join("model.json");
    save(&model, &Default::default(), &path).unwrap();
    let (loaded, _) = load(&path).unwrap();
    let mut output_diffs = 0;
    for seed in 0..10 {
        let clip = random_clip(300, DEFAULT_CODEBOOK_SIZES, seed);
        let a = model.predict(&clip, 0.5).unwrap().probability;
        let b = loaded.predict(&clip, 0.5).unwrap().probability;
        output_diffs += usize::from(a.to_bits() != b.to_bits());
    }
    let mut stream_diffs = 0;
    for seed in 0..10 {
        let clip = random_clip(500, DEFAULT_CODEBOOK_SIZES, 100 + seed);
        let bytes = encode_container(&clip);
        let file = dir.path().join(format!("{seed}.cwst"));
        write_container(&clip, &file).unwrap();
        let from_file = read_container(&file).unwrap();
        let ok = std::fs::read(&file).unwrap() == bytes
            && from_file == clip
            && encode_container(&decode_container(&bytes).unwrap()) == bytes;
        stream_diffs += usize::from(!ok);
    }
    let pass = loaded == model && output_diffs == 0 && stream_diffs == 0;
    report(
        13,
        pass,
        &format!("checkpoint: {output_diffs}/10 outputs differ; streams: {stream_diffs}/10 round trips differ"),
    );
    assert!(pass);
}
