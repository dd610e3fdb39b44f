//! Training, evaluation, feature export and latency benchmarking.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codeword::{CodewordClip, CodewordFrame, DEFAULT_CODEBOOK_SIZES, DEFAULT_FRAME_MS};
use crate::dataset::{Label, LabeledClip};
use crate::model::{dropout_mask, ArchConfig, CheckpointMetadata, CswModel, ForwardCache, ModelError};
use crate::nn::{adam_step, AdamState, BnMode, NnError, Tensor2};

/// Clips per forward call during evaluation and feature export.
const EVAL_CHUNK: usize = 32;
pub const MIN_LATENCY_REPS: usize = 30;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("split is empty")]
    EmptySplit,
    #[error("invalid hyper-parameters: {0}")]
    Config(String),
    #[error("non-finite gradient at epoch {epoch}, step {step}: {tensor}[{index}]")]
    NonFiniteGradient {
        epoch: usize,
        step: usize,
        tensor: String,
        index: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub lambda: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Fraction of the train split held out (per class) for validation.
    pub validation_fraction: f64,
    pub seed: u64,
    /// Evaluate infer-mode accuracy on the training clips after each epoch.
    pub eval_train: bool,
    /// Stop once the infer-mode training accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 256,
            dropout: 0.5,
            lambda: 1e-3,
            epochs: 30,
            patience: 5,
            validation_fraction: 0.1,
            seed: 0,
            eval_train: false,
            target_train_accuracy: None,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {}", self.lr));
        }
        if self.batch_size < 2 {
            return bad("batch size must be at least 2 for batch norm".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {}", self.lambda));
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!("validation fraction {} outside [0, 1)", self.validation_fraction));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss_mean: f64,
    pub train_loss_median: f64,
    /// Accuracy of the train-mode (dropout, batch statistics) predictions
    /// made during the epoch.
    pub train_accuracy: f64,
    /// Infer-mode accuracy on the training clips, when requested.
    pub train_eval_accuracy: Option<f64>,
    pub validation_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub step_loss: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_validation_accuracy: Option<f64>,
    pub stopped_early: bool,
}

pub struct TrainOutcome {
    pub model: CswModel,
    pub history: TrainHistory,
    pub metadata: CheckpointMetadata,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Splits indices into (train, validation), holding out the same fraction
/// of each class.
fn carve_validation(samples: &[LabeledClip], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in [Label::Cover, Label::Stego] {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].label == label).collect();
        idx.shuffle(rng);
        let n_val = (fraction * idx.len() as f64).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Shuffled mini-batches, each holding clips of a single length. A
/// trailing batch of one clip is dropped since batch norm needs two.
fn make_batches(samples: &[LabeledClip], indices: &[usize], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    let mut lengths: Vec<usize> = order.iter().map(|&i| samples[i].clip.len()).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let mut batches = Vec::new();
    for len in lengths {
        let group: Vec<usize> = order.iter().copied().filter(|&i| samples[i].clip.len() == len).collect();
        batches.extend(group.chunks(batch).filter(|c| c.len() >= 2).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

fn accuracy_of(model: &CswModel, samples: &[LabeledClip], indices: &[usize], threshold: f64) -> Result<f64, TrainError> {
    let subset: Vec<&LabeledClip> = indices.iter().map(|&i| &samples[i]).collect();
    let probs = probabilities(model, &subset)?;
    let correct = probs
        .iter()
        .zip(&subset)
        .filter(|(p, s)| (**p >= threshold) == s.label.is_stego())
        .count();
    Ok(correct as f64 / subset.len() as f64)
}

fn non_finite(names: &[String], epoch: usize, step: usize, tensor: usize, index: usize) -> TrainError {
    TrainError::NonFiniteGradient {
        epoch,
        step,
        tensor: names[tensor].clone(),
        index,
    }
}

/// Trains `model` on `samples` and returns the best-validation parameters
/// (the final ones when no validation clips are held out). `on_epoch` sees
/// each epoch's record as soon as it is complete.
pub fn train(
    mut model: CswModel,
    samples: &[LabeledClip],
    hyper: &HyperParams,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    hyper.validate()?;
    if samples.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let threshold = model.config().threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let (train_idx, val_idx) = carve_validation(samples, hyper.validation_fraction, &mut rng);
    if train_idx.len() < 2 {
        return Err(TrainError::EmptySplit);
    }
    let names = model.param_names();
    let mut adam = AdamState::new(hyper.lr, &model.param_lens());
    let m = model.spliced_dim();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, CswModel)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=hyper.epochs {
        let start = Instant::now();
        let batches = make_batches(samples, &train_idx, hyper.batch_size, &mut rng);
        let mut losses = Vec::with_capacity(batches.len());
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (step, batch) in batches.iter().enumerate() {
            let inputs: Vec<Tensor2> = batch.iter().map(|&i| model.input_for(&samples[i].clip)).collect();
            let refs: Vec<&Tensor2> = inputs.iter().collect();
            let labels: Vec<f64> = batch.iter().map(|&i| samples[i].label.target()).collect();
            let mask = if hyper.dropout > 0.0 {
                Some(dropout_mask(batch.len() * m, hyper.dropout, &mut rng)?)
            } else {
                None
            };
            let cache = model.forward_batch(&refs, BnMode::Train, mask)?;
            let (loss, grads) = match model.backward(&cache, &labels, hyper.lambda) {
                Ok(v) => v,
                Err(ModelError::Nn(NnError::NonFiniteGradient { tensor, index })) => {
                    return Err(non_finite(&names, epoch, step, tensor, index))
                }
                Err(e) => return Err(e.into()),
            };
            for (p, t) in cache.probabilities().iter().zip(&labels) {
                correct += usize::from((*p >= threshold) == (*t > 0.5));
            }
            seen += batch.len();
            model.absorb_batch_stats(&cache);
            match adam_step(&mut model.params_mut(), &grads.tensors, &mut adam) {
                Ok(()) => {}
                Err(NnError::NonFiniteGradient { tensor, index }) => {
                    return Err(non_finite(&names, epoch, step, tensor, index))
                }
                Err(e) => return Err(ModelError::from(e).into()),
            }
            losses.push(loss);
        }
        let train_eval_accuracy = if hyper.eval_train || hyper.target_train_accuracy.is_some() {
            Some(accuracy_of(&model, samples, &train_idx, threshold)?)
        } else {
            None
        };
        let validation_accuracy = if val_idx.is_empty() {
            None
        } else {
            Some(accuracy_of(&model, samples, &val_idx, threshold)?)
        };
        let record = EpochRecord {
            epoch,
            steps: losses.len(),
            train_loss_mean: losses.iter().sum::<f64>() / losses.len().max(1) as f64,
            train_loss_median: median(&losses),
            train_accuracy: correct as f64 / seen.max(1) as f64,
            train_eval_accuracy,
            validation_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.step_loss.extend_from_slice(&losses);
        history.epochs.push(record);

        if let Some(acc) = validation_accuracy {
            if best.as_ref().map_or(true, |(b, _)| acc > *b) {
                best = Some((acc, model.clone()));
                history.best_epoch = epoch;
                history.best_validation_accuracy = Some(acc);
                since_best = 0;
            } else {
                since_best += 1;
            }
        } else {
            history.best_epoch = epoch;
        }
        if let (Some(target), Some(acc)) = (hyper.target_train_accuracy, train_eval_accuracy) {
            if acc >= target {
                history.stopped_early = epoch < hyper.epochs;
                break;
            }
        }
        if hyper.patience > 0 && since_best >= hyper.patience {
            history.stopped_early = epoch < hyper.epochs;
            break;
        }
    }

    let model = match best {
        Some((_, m)) => m,
        None => model,
    };
    let metadata = CheckpointMetadata {
        epoch: Some(history.best_epoch),
        validation_accuracy: history.best_validation_accuracy,
        seed: Some(hyper.seed),
        notes: Default::default(),
    };
    Ok(TrainOutcome {
        model,
        history,
        metadata,
    })
}

/// Infer-mode probabilities in input order.
pub fn probabilities(model: &CswModel, samples: &[&LabeledClip]) -> Result<Vec<f64>, TrainError> {
    Ok(infer(model, samples, |cache, _| cache.probabilities().to_vec())?
        .into_iter()
        .flatten()
        .collect())
}

/// Runs infer-mode forwards over runs of equal-length clips and maps each
/// chunk's cache, preserving input order.
fn infer<T>(
    model: &CswModel,
    samples: &[&LabeledClip],
    mut f: impl FnMut(&ForwardCache, &[&LabeledClip]) -> T,
) -> Result<Vec<T>, TrainError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        let len = samples[i].clip.len();
        let mut j = i;
        while j < samples.len() && j - i < EVAL_CHUNK && samples[j].clip.len() == len {
            j += 1;
        }
        let chunk = &samples[i..j];
        let inputs: Vec<Tensor2> = chunk.iter().map(|s| model.input_for(&s.clip)).collect();
        let refs: Vec<&Tensor2> = inputs.iter().collect();
        let cache = model.forward_batch(&refs, BnMode::Infer, None)?;
        out.push(f(&cache, chunk));
        i = j;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub accuracy: f64,
    /// `FP / (FP + TN)`; `None` when there are no cover clips.
    pub fp_rate: Option<f64>,
    /// `FN / (FN + TP)`; `None` when there are no stego clips.
    pub fn_rate: Option<f64>,
    pub threshold: f64,
    pub probabilities: Vec<f64>,
}

impl EvalReport {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
        Self {
            tp,
            fp,
            fn_,
            tn,
            accuracy: (tp + tn) as f64 / (tp + tn + fp + fn_) as f64,
            fp_rate: ratio(fp, tn),
            fn_rate: ratio(fn_, tp),
            threshold: 0.5,
            probabilities: Vec::new(),
        }
    }

    /// Confusion counts with stego as the positive class.
    pub fn from_predictions(probabilities: Vec<f64>, labels: &[Label], threshold: f64) -> Self {
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for (p, l) in probabilities.iter().zip(labels) {
            match (*p >= threshold, l.is_stego()) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self {
            threshold,
            probabilities,
            ..Self::from_counts(tp, tn, fp, fn_)
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn evaluate(model: &CswModel, samples: &[LabeledClip], threshold: f64) -> Result<EvalReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(TrainError::Config(format!("threshold {threshold} outside (0, 1)")));
    }
    let refs: Vec<&LabeledClip> = samples.iter().collect();
    let probs = probabilities(model, &refs)?;
    let labels: Vec<Label> = samples.iter().map(|s| s.label).collect();
    Ok(EvalReport::from_predictions(probs, &labels, threshold))
}

/// Infer-mode fused features `O`, one row per clip in input order.
pub fn fused_features(model: &CswModel, samples: &[LabeledClip]) -> Result<Vec<Vec<f64>>, TrainError> {
    let refs: Vec<&LabeledClip> = samples.iter().collect();
    let chunks = infer(model, &refs, |cache, chunk| {
        (0..chunk.len()).map(|r| cache.fused().row(r).to_vec()).collect::<Vec<_>>()
    })?;
    Ok(chunks.into_iter().flatten().collect())
}

/// Writes `label, embedding_rate, o0 .. o{h-1}` rows as CSV.
pub fn export_features<W: std::io::Write>(model: &CswModel, samples: &[LabeledClip], out: W) -> Result<usize, TrainError> {
    let rows = fused_features(model, samples)?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["label".to_string(), "embedding_rate".to_string()];
    header.extend((0..model.fused_dim()).map(|i| format!("o{i}")));
    w.write_record(&header)?;
    for (s, row) in samples.iter().zip(&rows) {
        let mut record = vec![s.label.as_str().to_string(), s.embedding_rate.to_string()];
        record.extend(row.iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(rows.len())
}

pub fn export_features_to_file(
    model: &CswModel,
    samples: &[LabeledClip],
    path: impl AsRef<Path>,
) -> Result<usize, TrainError> {
    export_features(model, samples, std::fs::File::create(path)?)
}

/// One row of an ablation comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: char,
    pub label: String,
    pub spliced_dim: usize,
    pub params: usize,
    pub best_epoch: usize,
    pub accuracy: f64,
    pub fp_rate: Option<f64>,
    pub fn_rate: Option<f64>,
    pub train_seconds: f64,
}

/// Trains and evaluates each variant of `base` with identical data,
/// hyper-parameters and seeds.
pub fn ablation_study(
    base: &ArchConfig,
    variants: &[char],
    train_set: &[LabeledClip],
    test_set: &[LabeledClip],
    hyper: &HyperParams,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let config = base.variant(v)?;
        let model = CswModel::build(config.clone(), hyper.seed)?;
        let params = model.param_count();
        let start = Instant::now();
        let outcome = train(model, train_set, hyper, |_| {})?;
        let train_seconds = start.elapsed().as_secs_f64();
        let report = evaluate(&outcome.model, test_set, config.threshold)?;
        let row = AblationRow {
            variant: v.to_ascii_lowercase(),
            label: ArchConfig::ablation_label(v).into(),
            spliced_dim: config.spliced_dim(),
            params,
            best_epoch: outcome.history.best_epoch,
            accuracy: report.accuracy,
            fp_rate: report.fp_rate,
            fn_rate: report.fn_rate,
            train_seconds,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Plain-text table of ablation results.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let pct = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
    let mut out = format!(
        "{:<3} {:<28} {:>5} {:>9} {:>8} {:>7} {:>7}\n",
        "", "setting", "|Z|", "params", "acc %", "FP %", "FN %"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<3} {:<28} {:>5} {:>9} {:>8.2} {:>7} {:>7}\n",
            r.variant,
            r.label,
            r.spliced_dim,
            r.params,
            100.0 * r.accuracy,
            pct(r.fp_rate),
            pct(r.fn_rate)
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyEntry {
    pub frames: usize,
    pub samples: usize,
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub warmup: usize,
    pub entries: Vec<LatencyEntry>,
}

impl LatencyReport {
    pub fn entry(&self, frames: usize) -> Option<&LatencyEntry> {
        self.entries.iter().find(|e| e.frames == frames)
    }
}

/// Uniformly random clip, used as latency benchmark input.
pub fn random_clip(frames: usize, sizes: [u16; 3], seed: u64) -> CodewordClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..frames)
        .map(|_| {
            CodewordFrame([
                rng.gen_range(0..sizes[0]),
                rng.gen_range(0..sizes[1]),
                rng.gen_range(0..sizes[2]),
            ])
        })
        .collect();
    CodewordClip {
        frames,
        codebook_sizes: sizes,
        frame_duration_ms: DEFAULT_FRAME_MS,
    }
}

/// Times single-clip `predict` (normalization plus infer-mode forward) per
/// clip length, after `warmup` discarded runs.
pub fn bench_latency(
    model: &CswModel,
    lengths: &[usize],
    repetitions: usize,
    warmup: usize,
    seed: u64,
) -> Result<LatencyReport, TrainError> {
    if repetitions < MIN_LATENCY_REPS {
        return Err(TrainError::Config(format!(
            "at least {MIN_LATENCY_REPS} repetitions are needed, got {repetitions}"
        )));
    }
    let threshold = model.config().threshold;
    let mut entries = Vec::with_capacity(lengths.len());
    for &frames in lengths {
        let clip = random_clip(frames, DEFAULT_CODEBOOK_SIZES, seed ^ frames as u64);
        for _ in 0..warmup {
            std::hint::black_box(model.predict(&clip, threshold)?);
        }
        let mut times = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t = Instant::now();
            std::hint::black_box(model.predict(std::hint::black_box(&clip), threshold)?);
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (times.len() - 1) as f64;
        entries.push(LatencyEntry {
            frames,
            samples: times.len(),
            mean_ms: mean,
            sd_ms: var.sqrt(),
            median_ms: median(&times),
            min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
        });
    }
    Ok(LatencyReport { warmup, entries })
}
