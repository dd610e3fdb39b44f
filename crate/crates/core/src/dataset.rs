//! Labeled cover/stego datasets.
//!
//! Every (clip length, embedding rate) group gets `n_per_class` cover clips
//! and `n_per_class` stego clips, each stego clip embedded into its own
//! freshly generated cover. Within a group each class is split 80/20 into
//! train and test, so both splits stay balanced.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codeword::{
    read_container, write_container, write_sidecar, ClipMetadata, CodewordClip, StreamError,
    DEFAULT_CODEBOOK_SIZES, DEFAULT_FRAME_MS,
};
use crate::qim::{gen_cover, qim_embed, random_bits, CoverModel, QimError, QimKey};

pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid dataset config: {0}")]
    Config(String),
    #[error(transparent)]
    Qim(#[from] QimError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub codebook: u64,
    pub cover_model: u64,
    pub clips: u64,
    pub split: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            codebook: 1,
            cover_model: 2,
            clips: 3,
            split: 4,
        }
    }
}

impl Seeds {
    pub fn from_base(base: u64) -> Self {
        Self {
            codebook: derive_seed(base, &[0]),
            cover_model: derive_seed(base, &[1]),
            clips: derive_seed(base, &[2]),
            split: derive_seed(base, &[3]),
        }
    }
}

fn default_sizes() -> [u16; 3] {
    DEFAULT_CODEBOOK_SIZES
}
fn default_dim() -> usize {
    3
}
fn default_frame_ms() -> u16 {
    DEFAULT_FRAME_MS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub clip_lengths_frames: Vec<usize>,
    pub embedding_rates: Vec<f64>,
    pub n_per_class: usize,
    pub alpha: f64,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub out_dir: PathBuf,
    #[serde(default = "default_sizes")]
    pub codebook_sizes: [u16; 3],
    #[serde(default = "default_dim")]
    pub codebook_dim: usize,
    #[serde(default = "default_frame_ms")]
    pub frame_duration_ms: u16,
}

impl DatasetConfig {
    pub fn new(clip_lengths_frames: Vec<usize>, embedding_rates: Vec<f64>, n_per_class: usize, alpha: f64) -> Self {
        Self {
            clip_lengths_frames,
            embedding_rates,
            n_per_class,
            alpha,
            seeds: Seeds::default(),
            out_dir: PathBuf::new(),
            codebook_sizes: DEFAULT_CODEBOOK_SIZES,
            codebook_dim: 3,
            frame_duration_ms: DEFAULT_FRAME_MS,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::Config(m));
        if self.n_per_class == 0 {
            return bad("n_per_class must be positive".into());
        }
        if self.clip_lengths_frames.is_empty() || self.clip_lengths_frames.contains(&0) {
            return bad("clip_lengths_frames must be non-empty and positive".into());
        }
        if self.embedding_rates.is_empty() {
            return bad("embedding_rates must be non-empty".into());
        }
        if let Some(r) = self.embedding_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return bad(format!("embedding rate {r} outside [0, 1]"));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha {} must be positive", self.alpha));
        }
        if self.frame_duration_ms == 0 {
            return bad("frame_duration_ms must be positive".into());
        }
        Ok(())
    }

    pub fn key(&self) -> Result<QimKey, DatasetError> {
        Ok(QimKey::generate(self.codebook_sizes, self.codebook_dim, self.seeds.codebook)?)
    }

    pub fn cover_model(&self) -> Result<CoverModel, DatasetError> {
        Ok(CoverModel::dirichlet(self.codebook_sizes, self.alpha, self.seeds.cover_model)?)
    }
}

/// SplitMix64 over a base seed and a tag path.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut x = base;
    for &t in tags.iter().chain(std::iter::once(&0x5EED)) {
        x = x.wrapping_add(t).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Cover,
    Stego,
}

impl Label {
    pub fn is_stego(self) -> bool {
        self == Label::Stego
    }

    pub fn target(self) -> f64 {
        if self.is_stego() {
            1.0
        } else {
            0.0
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Cover => "cover",
            Label::Stego => "stego",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Embedding provenance of a stego clip.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedInfo {
    pub seed: u64,
    pub cover_seed: u64,
    pub mask: Vec<bool>,
    pub bits: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledClip {
    pub clip: CodewordClip,
    pub label: Label,
    /// Rate actually used to embed (0 for covers).
    pub embedding_rate: f64,
    /// Embedding rate of the group the clip belongs to.
    pub group_rate: f64,
    pub split: Split,
    pub embed: Option<EmbedInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Label,
    pub embedding_rate: f64,
    pub group_rate: f64,
    pub clip_len_frames: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: Seeds,
    pub alpha: f64,
    pub codebook_sizes: [u16; 3],
    pub codebook_dim: usize,
    pub frame_duration_ms: u16,
    pub n_per_class: usize,
}

fn bit_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn parse_bit_string(s: &str) -> Option<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        })
        .collect()
}

/// Generates every clip of the configured dataset in memory, in manifest
/// order (group, then cover before stego, then index).
pub fn generate_samples(config: &DatasetConfig) -> Result<Vec<LabeledClip>, DatasetError> {
    config.validate()?;
    let key = config.key()?;
    let model = config.cover_model()?;
    let n = config.n_per_class;
    let n_train = (TRAIN_FRACTION * n as f64).round() as usize;
    let mut out = Vec::with_capacity(2 * n * config.clip_lengths_frames.len() * config.embedding_rates.len());
    let mut group = 0u64;
    for &len in &config.clip_lengths_frames {
        for &rate in &config.embedding_rates {
            for (class, label) in [(0u64, Label::Cover), (1, Label::Stego)] {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seeds.split,
                    &[group, class],
                )));
                let mut split = vec![Split::Test; n];
                for &i in &order[..n_train] {
                    split[i] = Split::Train;
                }
                for (i, &sp) in split.iter().enumerate() {
                    let tag = |k: u64| derive_seed(config.seeds.clips, &[group, class, i as u64, k]);
                    let cover_seed = tag(0);
                    let cover = gen_cover(&model, len, cover_seed).with_duration(config.frame_duration_ms);
                    let sample = match label {
                        Label::Cover => LabeledClip {
                            clip: cover,
                            label,
                            embedding_rate: 0.0,
                            group_rate: rate,
                            split: sp,
                            embed: None,
                        },
                        Label::Stego => {
                            let bits = random_bits(3 * len, tag(1));
                            let seed = tag(2);
                            let rec = qim_embed(&cover, &bits, rate, &key, seed)?;
                            LabeledClip {
                                clip: rec.stego,
                                label,
                                embedding_rate: rate,
                                group_rate: rate,
                                split: sp,
                                embed: Some(EmbedInfo {
                                    seed,
                                    cover_seed,
                                    mask: rec.mask,
                                    bits: rec.bits,
                                }),
                            }
                        }
                    };
                    out.push(sample);
                }
            }
            group += 1;
        }
    }
    Ok(out)
}

fn rate_tag(rate: f64) -> String {
    format!("{:03}", (rate * 100.0).round() as u32)
}

/// Writes every clip as `.cwst` plus sidecar under `out_dir`, then the
/// manifest (`manifest.json`). Paths in the manifest are relative to it.
pub fn build_dataset(config: &DatasetConfig) -> Result<DatasetManifest, DatasetError> {
    let samples = generate_samples(config)?;
    let out = &config.out_dir;
    fs::create_dir_all(out)?;
    let mut counters = std::collections::HashMap::new();
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let dir = format!("len{:05}_rate{}", s.clip.len(), rate_tag(s.group_rate));
        fs::create_dir_all(out.join(&dir))?;
        let idx = counters.entry((dir.clone(), s.label)).or_insert(0usize);
        let rel = format!("{dir}/{}_{:05}.cwst", s.label.as_str(), *idx);
        *idx += 1;
        let path = out.join(&rel);
        write_container(&s.clip, &path)?;
        let mut meta = ClipMetadata {
            label: Some(s.label.as_str().into()),
            embedding_rate: Some(s.embedding_rate),
            ..Default::default()
        };
        if let Some(e) = &s.embed {
            meta.seed = Some(e.seed);
            meta.extra.insert("cover_seed".into(), e.cover_seed.into());
            meta.extra.insert("message".into(), bit_string(&e.bits).into());
            meta.extra.insert("mask".into(), bit_string(&e.mask).into());
        }
        write_sidecar(&path, &meta)?;
        entries.push(ManifestEntry {
            path: rel,
            label: s.label,
            embedding_rate: s.embedding_rate,
            group_rate: s.group_rate,
            clip_len_frames: s.clip.len(),
            split: s.split,
        });
    }
    let manifest = DatasetManifest {
        entries,
        seed: config.seeds.clone(),
        alpha: config.alpha,
        codebook_sizes: config.codebook_sizes,
        codebook_dim: config.codebook_dim,
        frame_duration_ms: config.frame_duration_ms,
        n_per_class: config.n_per_class,
    };
    manifest.save(out.join("manifest.json"))?;
    Ok(manifest)
}

/// Entry filter used when loading a manifest.
#[derive(Clone, Debug, Default)]
pub struct Selection {
    pub split: Option<Split>,
    pub clip_len: Option<usize>,
    pub group_rate: Option<f64>,
}

impl Selection {
    pub fn split(split: Split) -> Self {
        Self {
            split: Some(split),
            ..Default::default()
        }
    }

    pub fn matches(&self, e: &ManifestEntry) -> bool {
        self.split.map_or(true, |s| s == e.split)
            && self.clip_len.map_or(true, |l| l == e.clip_len_frames)
            && self.group_rate.map_or(true, |r| (r - e.group_rate).abs() < 1e-9)
    }
}

impl DatasetManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn count(&self, sel: &Selection) -> usize {
        self.entries.iter().filter(|e| sel.matches(e)).count()
    }

    /// Reads the selected clips; `base` is the manifest's directory.
    pub fn load_samples(&self, base: impl AsRef<Path>, sel: &Selection) -> Result<Vec<LabeledClip>, DatasetError> {
        self.entries
            .iter()
            .filter(|e| sel.matches(e))
            .map(|e| {
                Ok(LabeledClip {
                    clip: read_container(base.as_ref().join(&e.path))?,
                    label: e.label,
                    embedding_rate: e.embedding_rate,
                    group_rate: e.group_rate,
                    split: e.split,
                    embed: None,
                })
            })
            .collect()
    }
}

/// Loads a manifest and the clips it selects, resolving paths against the
/// manifest's directory.
pub fn load_split(manifest_path: impl AsRef<Path>, sel: &Selection) -> Result<Vec<LabeledClip>, DatasetError> {
    let p = manifest_path.as_ref();
    let manifest = DatasetManifest::load(p)?;
    manifest.load_samples(p.parent().unwrap_or(Path::new(".")), sel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors() {
        let mut c = DatasetConfig::new(vec![20], vec![0.5], 0, 0.1);
        assert!(matches!(c.validate(), Err(DatasetError::Config(_))));
        c.n_per_class = 4;
        c.embedding_rates = vec![1.2];
        assert!(matches!(c.validate(), Err(DatasetError::Config(_))));
        c.embedding_rates = vec![1.0];
        assert!(c.validate().is_ok());
    }

    #[test]
    fn balanced_split() {
        let c = DatasetConfig::new(vec![16], vec![1.0], 100, 0.1);
        let s = generate_samples(&c).unwrap();
        assert_eq!(s.len(), 200);
        let count = |sp, l| s.iter().filter(|x| x.split == sp && x.label == l).count();
        assert_eq!(count(Split::Train, Label::Cover), 80);
        assert_eq!(count(Split::Train, Label::Stego), 80);
        assert_eq!(count(Split::Test, Label::Cover), 20);
        assert_eq!(count(Split::Test, Label::Stego), 20);
    }

    #[test]
    fn seeds_are_distinct() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(7, &[3]), derive_seed(7, &[3]));
    }

    #[test]
    fn bit_strings() {
        let b = vec![true, false, true];
        assert_eq!(parse_bit_string(&bit_string(&b)).unwrap(), b);
        assert_eq!(parse_bit_string("01x"), None);
    }
}
