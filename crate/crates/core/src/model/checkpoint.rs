//! JSON checkpoints.
//!
//! A checkpoint is one JSON object:
//!
//! ```text
//! {
//!   "format": "cswsteg-checkpoint",
//!   "version": 1,
//!   "arch_hash": "<sha256 of the canonical config JSON>",
//!   "config": { ...ArchConfig... },
//!   "metadata": { ...CheckpointMetadata... },
//!   "paths": [ { "kind", "pool_k", "blocks": [ { "conv", "bn" } ] } ],
//!   "fusion": { "inputs", "outputs", "weights", "bias" },
//!   "detect": { ... }
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::FeaturePath;
use super::{ArchConfig, CswModel, ModelError};
use crate::nn::DenseParams;

pub const FORMAT_TAG: &str = "cswsteg-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

/// Free-form training provenance stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub validation_accuracy: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub notes: serde_json::Map<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    arch_hash: String,
    config: ArchConfig,
    #[serde(default)]
    metadata: CheckpointMetadata,
    paths: Vec<FeaturePath>,
    fusion: DenseParams,
    detect: DenseParams,
}

pub fn to_json(model: &CswModel, metadata: &CheckpointMetadata) -> String {
    let file = CheckpointFile {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        arch_hash: model.config().hash(),
        config: model.config().clone(),
        metadata: metadata.clone(),
        paths: model.paths.clone(),
        fusion: model.fusion.clone(),
        detect: model.detect.clone(),
    };
    serde_json::to_string(&file).expect("checkpoint serializes")
}

pub fn from_json(text: &str) -> Result<(CswModel, CheckpointMetadata), ModelError> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
    if file.format != FORMAT_TAG {
        return Err(ModelError::Format(format!("unknown format tag '{}'", file.format)));
    }
    if file.version != FORMAT_VERSION {
        return Err(ModelError::Format(format!("unsupported version {}", file.version)));
    }
    let found = file.config.hash();
    if found != file.arch_hash {
        return Err(ModelError::ArchMismatch {
            expected: file.arch_hash,
            found,
        });
    }
    let model = CswModel::from_parts(file.config, file.paths, file.fusion, file.detect)?;
    if !model.params().iter().all(|t| t.iter().all(|v| v.is_finite())) {
        return Err(ModelError::Format("non-finite parameter".into()));
    }
    Ok((model, file.metadata))
}

pub fn save(model: &CswModel, metadata: &CheckpointMetadata, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, to_json(model, metadata))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(CswModel, CheckpointMetadata), ModelError> {
    from_json(&std::fs::read_to_string(path)?)
}

/// Loads a checkpoint and checks it was built for `expected`.
pub fn load_expecting(
    path: impl AsRef<Path>,
    expected: &ArchConfig,
) -> Result<(CswModel, CheckpointMetadata), ModelError> {
    let (model, meta) = load(path)?;
    let (want, got) = (expected.hash(), model.config().hash());
    if want != got {
        return Err(ModelError::ArchMismatch {
            expected: want,
            found: got,
        });
    }
    Ok((model, meta))
}
