//! Command-line front end. [`run`] returns the process exit code: 0 on
//! success, 1 on an operational error, 2 on a usage error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::codeword::{read_container, read_sidecar, write_container, write_sidecar, ClipMetadata};
use crate::dataset::{
    build_dataset, load_split, DatasetConfig, DatasetError, Seeds, Selection, Split,
};
use crate::model::{self, ArchConfig, CswModel, ModelError};
use crate::qim::{qim_embed, random_bits, QimError, QimKey};
use crate::stream::{sliding_detect, DetectError, DetectorSettings, FrameSource, Origin};
use crate::train::{
    ablation_study, ablation_table, bench_latency, evaluate, export_features_to_file, train, HyperParams,
    TrainError,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Qim(#[from] QimError),
    #[error(transparent)]
    Stream(#[from] crate::codeword::StreamError),
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Parser, Debug)]
#[command(name = "cswsteg", version, about = "Codeword-stream QIM steganalysis toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a labeled cover/stego dataset from a config JSON.
    Gen(GenArgs),
    /// Embed random bits into a cover container.
    Embed(EmbedArgs),
    /// Train a detector on a dataset's train split.
    Train(TrainArgs),
    /// Evaluate a checkpoint and print a JSON report.
    Eval(EvalArgs),
    /// Export fused feature vectors as CSV.
    Features(FeaturesArgs),
    /// Measure single-clip inference latency.
    Bench(BenchArgs),
    /// Sliding-window detection over a live or recorded stream.
    Detect(DetectArgs),
    /// Train and compare the ablation variants.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Dataset config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Derive all generator seeds from this value.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    /// Cover container.
    #[arg(long)]
    input: PathBuf,
    /// Stego container to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Seed for frame selection and message bits.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset config whose codebook seed and dimension define the key.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SelectArgs {
    /// Dataset manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Only clips of this length.
    #[arg(long)]
    length: Option<usize>,
    /// Only clips of this embedding-rate group.
    #[arg(long)]
    rate: Option<f64>,
}

impl SelectArgs {
    fn selection(&self, split: Option<Split>) -> Selection {
        Selection {
            split,
            clip_len: self.length,
            group_rate: self.rate,
        }
    }
}

#[derive(Args, Debug)]
struct HyperArgs {
    /// Hyper-parameter JSON; flags below override its fields.
    #[arg(long)]
    hyper: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl HyperArgs {
    fn resolve(&self) -> Result<HyperParams, CliError> {
        let mut h: HyperParams = match &self.hyper {
            Some(p) => read_json(p)?,
            None => HyperParams::default(),
        };
        if let Some(v) = self.epochs {
            h.epochs = v;
        }
        if let Some(v) = self.lr {
            h.lr = v;
        }
        if let Some(v) = self.batch_size {
            h.batch_size = v;
        }
        if let Some(v) = self.dropout {
            h.dropout = v;
        }
        if let Some(v) = self.patience {
            h.patience = v;
        }
        if let Some(v) = self.seed {
            h.seed = v;
        }
        h.validate()?;
        Ok(h)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    select: SelectArgs,
    /// Architecture JSON (defaults to the full model).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ablation variant `a`-`j` applied to the architecture.
    #[arg(long)]
    variant: Option<char>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Checkpoint to write; the history goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    select: SelectArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Decision threshold (defaults to the model's).
    #[arg(long)]
    threshold: Option<f64>,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    select: SelectArgs,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    /// Clip lengths in frames.
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 100, 1000])]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 10)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    /// Container to read; standard input when omitted or `-`.
    #[arg(long, conflicts_with = "listen")]
    input: Option<PathBuf>,
    /// Accept one TCP connection on this address instead.
    #[arg(long)]
    listen: Option<SocketAddr>,
    #[arg(long, default_value_t = crate::stream::DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = crate::stream::DEFAULT_HOP)]
    hop: usize,
    #[arg(long)]
    threshold: Option<f64>,
    /// Give up when the source is silent this long.
    #[arg(long)]
    idle_timeout_ms: Option<u64>,
    /// Write events here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    select: SelectArgs,
    /// Base architecture JSON the variants modify.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Variants to run.
    #[arg(long, default_value = "abcdefghij")]
    variants: String,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Write the rows as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.into(),
        source,
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n")?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn threshold_or(model: &CswModel, t: Option<f64>) -> Result<f64, CliError> {
    let t = t.unwrap_or(model.config().threshold);
    if !(t > 0.0 && t < 1.0) {
        return Err(CliError::Usage(format!("threshold {t} outside (0, 1)")));
    }
    Ok(t)
}

fn history_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.file_name().unwrap_or_default().to_os_string();
    name.push(".history.json");
    checkpoint.with_file_name(name)
}

fn load_selected(select: &SelectArgs, split: Option<Split>) -> Result<Vec<crate::dataset::LabeledClip>, CliError> {
    let samples = load_split(&select.manifest, &select.selection(split))?;
    if samples.is_empty() {
        return Err(TrainError::EmptySplit.into());
    }
    Ok(samples)
}

fn arch(config: &Option<PathBuf>) -> Result<ArchConfig, CliError> {
    Ok(match config {
        Some(p) => read_json(p)?,
        None => ArchConfig::default(),
    })
}

fn cmd_gen(a: GenArgs) -> Result<(), CliError> {
    let mut config: DatasetConfig = read_json(&a.config)?;
    if let Some(out) = a.out {
        config.out_dir = out;
    }
    if let Some(seed) = a.seed {
        config.seeds = Seeds::from_base(seed);
    }
    if config.out_dir.as_os_str().is_empty() {
        return Err(CliError::Usage("no output directory: pass --out or set out_dir".into()));
    }
    let manifest = build_dataset(&config)?;
    let count = |s| manifest.count(&Selection::split(s));
    print_json(&serde_json::json!({
        "manifest": config.out_dir.join("manifest.json"),
        "clips": manifest.entries.len(),
        "train": count(Split::Train),
        "test": count(Split::Test),
    }))
}

fn cmd_embed(a: EmbedArgs) -> Result<(), CliError> {
    if !(0.0..=1.0).contains(&a.rate) {
        return Err(CliError::Usage(format!("rate {} outside [0, 1]", a.rate)));
    }
    let cover = read_container(&a.input)?;
    let (seed, dim) = match &a.config {
        Some(p) => {
            let c: DatasetConfig = read_json(p)?;
            (c.seeds.codebook, c.codebook_dim)
        }
        None => (Seeds::default().codebook, 3),
    };
    let key = QimKey::generate(cover.codebook_sizes, dim, seed)?;
    let bits = random_bits(3 * cover.len(), a.seed ^ 0xB175);
    let record = qim_embed(&cover, &bits, a.rate, &key, a.seed)?;
    write_container(&record.stego, &a.out)?;
    let as_str = |v: &[bool]| v.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>();
    let mut meta = ClipMetadata {
        label: Some("stego".into()),
        embedding_rate: Some(a.rate),
        seed: Some(a.seed),
        ..Default::default()
    };
    meta.extra.insert("message".into(), as_str(&record.bits).into());
    meta.extra.insert("mask".into(), as_str(&record.mask).into());
    if let Some(cover_meta) = read_sidecar(&a.input)? {
        if let Some(s) = cover_meta.seed {
            meta.extra.insert("cover_seed".into(), s.into());
        }
    }
    write_sidecar(&a.out, &meta)?;
    print_json(&serde_json::json!({
        "frames": record.stego.len(),
        "embedded_frames": record.mask.iter().filter(|&&m| m).count(),
        "bits": record.bits.len(),
    }))
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut config = arch(&a.config)?;
    if let Some(v) = a.variant {
        config = config.variant(v)?;
    }
    let hyper = a.hyper.resolve()?;
    let samples = load_selected(&a.select, Some(Split::Train))?;
    let model = CswModel::build(config, hyper.seed)?;
    let outcome = train(model, &samples, &hyper, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  train {:.4}  val {}  {:.1}s",
            r.epoch,
            r.train_loss_mean,
            r.train_accuracy,
            r.validation_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
            r.seconds
        );
    })?;
    model::save(&outcome.model, &outcome.metadata, &a.out)?;
    write_json(&outcome.history, &history_path(&a.out))?;
    print_json(&serde_json::json!({
        "checkpoint": a.out,
        "best_epoch": outcome.history.best_epoch,
        "validation_accuracy": outcome.history.best_validation_accuracy,
        "epochs_run": outcome.history.epochs.len(),
    }))
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let (model, _) = model::load(&a.model)?;
    let threshold = threshold_or(&model, a.threshold)?;
    let samples = load_selected(&a.select, a.split.split())?;
    let report = evaluate(&model, &samples, threshold)?;
    if let Some(out) = &a.out {
        write_json(&report, out)?;
    }
    print_json(&report)
}

fn cmd_features(a: FeaturesArgs) -> Result<(), CliError> {
    let (model, _) = model::load(&a.model)?;
    let samples = load_selected(&a.select, a.split.split())?;
    let rows = export_features_to_file(&model, &samples, &a.out)?;
    print_json(&serde_json::json!({ "rows": rows, "columns": 2 + model.fused_dim(), "out": a.out }))
}

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    let (model, _) = model::load(&a.model)?;
    let report = bench_latency(&model, &a.lengths, a.reps, a.warmup, a.seed)?;
    if let Some(out) = &a.out {
        write_json(&report, out)?;
    }
    print_json(&report)
}

fn cmd_detect(a: DetectArgs) -> Result<(), CliError> {
    let (model, _) = model::load(&a.model)?;
    let settings = DetectorSettings {
        window: a.window,
        hop: a.hop,
        threshold: threshold_or(&model, a.threshold)?,
    };
    let origin = match (&a.listen, &a.input) {
        (Some(addr), _) => Origin::Tcp(*addr),
        (None, Some(p)) if p.as_os_str() != "-" => Origin::File(p.clone()),
        _ => Origin::Stdin,
    };
    let source = FrameSource::open(&origin, a.idle_timeout_ms.map(Duration::from_millis))?;
    let Some(sizes) = source.codebook_sizes() else {
        return Ok(());
    };
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    let mut write_err = None;
    let result = sliding_detect(source, sizes, &model, &settings, |event| {
        if write_err.is_none() {
            let line = serde_json::to_string(&event).expect("event serializes");
            if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
                write_err = Some(e);
            }
        }
    });
    if let Some(e) = write_err {
        return Err(e.into());
    }
    result?;
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<(), CliError> {
    let base = arch(&a.config)?;
    let variants: Vec<char> = a.variants.chars().filter(|c| !c.is_whitespace() && *c != ',').collect();
    for &v in &variants {
        base.variant(v)?;
    }
    let hyper = a.hyper.resolve()?;
    let train_set = load_selected(&a.select, Some(Split::Train))?;
    let test_set = load_selected(&a.select, Some(Split::Test))?;
    let rows = ablation_study(&base, &variants, &train_set, &test_set, &hyper, |r| {
        eprintln!("variant {}: accuracy {:.4} ({:.0}s)", r.variant, r.accuracy, r.train_seconds);
    })?;
    if let Some(out) = &a.out {
        write_json(&rows, out)?;
    }
    print!("{}", ablation_table(&rows));
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Features(a) => cmd_features(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_flag_is_usage_error() {
        assert_eq!(run(["cswsteg", "eval", "--bogus"]), 2);
        assert_eq!(run(["cswsteg"]), 2);
        assert_eq!(run(["cswsteg", "frobnicate"]), 2);
    }

    #[test]
    fn help_succeeds() {
        assert_eq!(run(["cswsteg", "--help"]), 0);
    }

    #[test]
    fn missing_file_is_operational_error() {
        assert_eq!(run(["cswsteg", "gen", "--config", "/nonexistent/c.json", "--out", "/tmp/x"]), 1);
    }

    #[test]
    fn history_next_to_checkpoint() {
        assert_eq!(history_path(Path::new("/a/m.ckpt")), PathBuf::from("/a/m.ckpt.history.json"));
    }
}
