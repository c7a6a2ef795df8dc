//! Run configuration files: one JSON document naming the environment,
//! model, training settings and, optionally, a transfer experiment.
//!
//! Any field can be overridden with `dotted.path=value`; the value is read
//! as JSON when it parses and as a plain string otherwise.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::env::{AnyEnv, EnvConfig, Environment};
use crate::policy::ModelSpec;
use crate::trainers::{Algorithm, TrainConfig};
use crate::transfer::{Arm, TransferPlan};

pub const SEED_VAR: &str = "POLIDIST_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid override `{0}`: expected dotted.key=value")]
    Override(String),
    #[error("config schema: {0}")]
    Schema(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_retrain() -> Vec<Algorithm> {
    vec![Algorithm::Reinforce, Algorithm::VfuncReinforce]
}

fn default_arms() -> Vec<Arm> {
    Arm::ALL.to_vec()
}

fn default_threshold() -> f64 {
    0.8
}

fn default_window() -> usize {
    10
}

/// The transfer part of a run config. Source runs use the top-level env,
/// model and train sections; targets reuse the train section with
/// `target_updates` as their budget when given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSection {
    pub targets: Vec<EnvConfig>,
    #[serde(default = "default_retrain")]
    pub retrain_algorithms: Vec<Algorithm>,
    #[serde(default = "default_arms")]
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub target_updates: Option<usize>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_window")]
    pub window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub transfer: Option<TransferSection>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Falls back to `POLIDIST_SEED`, then 0.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Sets `path` (dot-separated object keys) to `raw` inside `doc`, creating
/// intermediate objects as needed.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), ConfigError> {
    let (path, raw) = spec
        .split_once('=')
        .filter(|(p, _)| !p.is_empty() && p.split('.').all(|k| !k.is_empty()))
        .ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for key in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ConfigError::Override(format!("{spec} (`{key}` is not inside an object)")))?;
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    let last = keys[keys.len() - 1];
    node.as_object_mut()
        .ok_or_else(|| ConfigError::Override(format!("{spec} (parent of `{last}` is not an object)")))?
        .insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses, applies overrides in order, and validates.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| ConfigError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, overrides)
    }

    /// Checks every section, including that each environment builds.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        self.model.validate().map_err(invalid)?;
        self.train.validate().map_err(|e| invalid(e.to_string()))?;
        self.env
            .build()
            .map_err(|e| invalid(format!("env `{}`: {e}", self.env.id())))?;
        if self.transfer.is_some() {
            let plan = self.transfer_plan(0)?;
            for t in &plan.targets {
                t.build().map_err(|e| invalid(format!("target `{}`: {e}", t.id())))?;
            }
            plan.validate().map_err(|e| invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Explicit seed, else `POLIDIST_SEED`, else 0.
    pub fn resolve_seed(&self) -> Result<u64, ConfigError> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_VAR) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{SEED_VAR}=`{v}` is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    pub fn build_env(&self) -> Result<AnyEnv, ConfigError> {
        self.env.build().map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// The experiment described by the transfer section. `fallback_seed`
    /// is used when the section lists no seeds.
    pub fn transfer_plan(&self, fallback_seed: u64) -> Result<TransferPlan, ConfigError> {
        let t = self
            .transfer
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("config has no transfer section".into()))?;
        let mut target_train = self.train.clone();
        if let Some(n) = t.target_updates {
            target_train.total_updates = n;
        }
        Ok(TransferPlan {
            source: self.env.clone(),
            targets: t.targets.clone(),
            model: self.model.clone(),
            source_train: self.train.clone(),
            target_train,
            retrain_algorithms: t.retrain_algorithms.clone(),
            arms: t.arms.clone(),
            seeds: if t.seeds.is_empty() {
                vec![fallback_seed]
            } else {
                t.seeds.clone()
            },
            threshold: t.threshold,
            window: t.window,
        })
    }

    /// Observation width and action count of the configured env.
    pub fn env_dims(&self) -> Result<(usize, usize), ConfigError> {
        let env = self.build_env()?;
        Ok((env.obs_dim(), env.action_count()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    const BASE: &str = r#"{"env": {"family": "grid", "id": "grid1", "size": 6}}"#;

    #[test]
    fn defaults_fill_missing_sections() {
        let c = RunConfig::from_json(BASE, &[]).unwrap();
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.model, ModelSpec::default());
        assert_eq!(c.output_dir, PathBuf::from("runs"));
        assert!(c.transfer.is_none());
    }

    #[test]
    fn overrides_parse_json_then_fall_back_to_strings() {
        let o = |s: &str| s.to_string();
        let c = RunConfig::from_json(
            BASE,
            &[
                o("train.total_updates=3"),
                o("train.algorithm=a2c"),
                o("model.hidden=[8,8]"),
                o("env.max_steps=12"),
                o("output_dir=out/x"),
                o("seed=9"),
            ],
        )
        .unwrap();
        assert_eq!(c.train.total_updates, 3);
        assert_eq!(c.train.algorithm, Algorithm::A2c);
        assert_eq!(c.model.hidden, vec![8, 8]);
        assert_eq!(c.output_dir, PathBuf::from("out/x"));
        assert_eq!(c.resolve_seed().unwrap(), 9);
        assert!(matches!(
            c.env,
            EnvConfig::Grid {
                max_steps: Some(12),
                ..
            }
        ));
    }

    #[test]
    fn override_creates_nested_objects() {
        let mut doc = json!({"a": 1});
        apply_override(&mut doc, "b.c.d=true").unwrap();
        assert_eq!(doc, json!({"a": 1, "b": {"c": {"d": true}}}));
        assert!(apply_override(&mut doc, "a.x=1").is_err());
        assert!(apply_override(&mut doc, "novalue").is_err());
        assert!(apply_override(&mut doc, "a..b=1").is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let err = |text: &str, o: &[&str]| {
            let o: Vec<String> = o.iter().map(|s| s.to_string()).collect();
            RunConfig::from_json(text, &o).unwrap_err()
        };
        assert!(matches!(err(BASE, &["train.bogus=1"]), ConfigError::Schema(_)));
        assert!(matches!(err(BASE, &["extra=1"]), ConfigError::Schema(_)));
        assert!(matches!(err(BASE, &["env.id=grid99"]), ConfigError::Invalid(_)));
        assert!(matches!(err(BASE, &["train.lr=-1"]), ConfigError::Invalid(_)));
        assert!(matches!(err(BASE, &["model.latent_dim=0"]), ConfigError::Invalid(_)));
        assert!(matches!(err("{", &[]), ConfigError::Schema(_)));
        let bad_target = r#"{"env": {"family": "grid", "id": "grid1", "size": 6},
            "transfer": {"targets": [{"family": "grid", "id": "nope", "size": 6}], "seeds": [1]}}"#;
        assert!(matches!(err(bad_target, &[]), ConfigError::Invalid(_)));
    }

    #[test]
    fn transfer_section_becomes_plan() {
        let text = r#"{"env": {"family": "grid", "id": "grid1", "size": 6},
            "train": {"total_updates": 7},
            "transfer": {"targets": [{"family": "grid", "id": "grid2", "size": 6}],
                         "seeds": [], "target_updates": 4}}"#;
        let c = RunConfig::from_json(text, &[]).unwrap();
        let plan = c.transfer_plan(5).unwrap();
        assert_eq!(plan.seeds, vec![5]);
        assert_eq!(plan.source_train.total_updates, 7);
        assert_eq!(plan.target_train.total_updates, 4);
        assert_eq!(plan.retrain_algorithms, default_retrain());
        assert_eq!(plan.arms, Arm::ALL.to_vec());
        assert_eq!(plan.cells().len(), 2 + 6);
    }
}
