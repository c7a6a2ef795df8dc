//! JSON checkpoints.
//!
//! Parameters are stored as decimal strings in Rust's shortest round-trip
//! formatting, so `load(save(p))` reproduces every bit and the files stay
//! diffable.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diffcore::{ParamSet, Tensor};
use crate::io::atomic_write;
use crate::policy::{ModelConfig, PolicyModel};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub env: String,
    pub algorithm: String,
    pub lambda: f64,
    pub gamma: f64,
    pub seed: u64,
    pub updates: usize,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoredTensor {
    shape: Vec<usize>,
    data: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Stored {
    format_version: u32,
    metadata: Metadata,
    model: ModelConfig,
    params: BTreeMap<String, StoredTensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: Metadata,
    pub model: PolicyModel,
}

/// Hex SHA-256 of a value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn new(metadata: Metadata, model: PolicyModel) -> Self {
        Self { metadata, model }
    }

    pub fn to_json(&self) -> String {
        let params = self
            .model
            .params
            .iter()
            .map(|(name, t)| {
                let stored = StoredTensor {
                    shape: t.shape().to_vec(),
                    data: t.data().iter().map(|v| format!("{v:?}")).collect(),
                };
                (name.to_string(), stored)
            })
            .collect();
        let stored = Stored {
            format_version: FORMAT_VERSION,
            metadata: self.metadata.clone(),
            model: self.model.config.clone(),
            params,
        };
        let mut text = serde_json::to_string_pretty(&stored).expect("checkpoint serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let stored: Stored = serde_json::from_str(text).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if stored.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version(stored.format_version));
        }
        let mut params = ParamSet::new();
        for (name, t) in stored.params {
            let data = t
                .data
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| CheckpointError::Format(format!("bad value `{s}` in {name}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let tensor = Tensor::new(t.shape, data).map_err(|e| CheckpointError::Format(format!("{name}: {e}")))?;
            params.insert(&name, tensor);
        }
        let model =
            PolicyModel::from_params(stored.model, params).map_err(|e| CheckpointError::Format(e.to_string()))?;
        Ok(Self {
            metadata: stored.metadata,
            model,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        atomic_write(path, self.to_json().as_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// A warning when the stored config hash differs from `expected`.
    pub fn hash_warning(&self, expected: &str) -> Option<String> {
        (self.metadata.config_hash != expected).then(|| {
            format!(
                "checkpoint config hash {} differs from current config {}",
                self.metadata.config_hash, expected
            )
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn sample() -> Checkpoint {
        let mut cfg = ModelConfig::new(6, 4);
        cfg.hidden = vec![5];
        cfg.recog_hidden = vec![3];
        cfg.latent_dim = 2;
        cfg.value_head = true;
        cfg.recognition = true;
        let mut model = PolicyModel::new(cfg, &mut stream(4, "init"));
        // awkward values: subnormal, negative zero, long mantissas
        let w = model.params.get_mut("pi.out.w").unwrap();
        w.data_mut()[0] = 5e-324;
        w.data_mut()[1] = -0.0;
        w.data_mut()[2] = 0.1 + 0.2;
        w.data_mut()[3] = -1.0 / 3.0;
        let metadata = Metadata {
            env: "grid1".into(),
            algorithm: "vfunc+a2c".into(),
            lambda: 0.1,
            gamma: 0.99,
            seed: 4,
            updates: 12,
            config_hash: config_hash(&model.config),
        };
        Checkpoint::new(metadata, model)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back.metadata, ck.metadata);
        assert_eq!(back.model.config, ck.model.config);
        for (name, t) in ck.model.params.iter() {
            let u = back.model.params.get(name).unwrap();
            assert_eq!(t.shape(), u.shape());
            let a: Vec<u64> = t.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = u.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{name}");
        }
        assert_eq!(back.to_json(), ck.to_json());
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn rejects_corruption() {
        let text = sample().to_json();
        assert!(Checkpoint::from_json("{").is_err());
        assert!(Checkpoint::from_json(&text.replace("\"format_version\": 1", "\"format_version\": 9")).is_err());
        let broken = text.replacen("\"shape\": [\n", "\"shape\": [\n        7,\n", 1);
        assert!(Checkpoint::from_json(&broken).is_err());
        assert!(Checkpoint::from_json(&text.replacen("\"-0.0\"", "\"NaN\"", 1)).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ModelConfig::new(4, 4);
        let mut b = a.clone();
        b.latent_dim = 3;
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
        let ck = sample();
        assert!(ck.hash_warning(&ck.metadata.config_hash).is_none());
        assert!(ck.hash_warning("00").is_some());
    }
}
