//! Source-to-target transfer experiments.
//!
//! For every seed a source model is trained twice on the source task, once
//! with the entropy bound and once with the plain policy gradient. Each
//! target task is then trained under every retrain algorithm from three
//! initialisations ("arms"): either source model, or a fresh one.
//!
//! Directory layout:
//!
//! ```text
//! manifest.json
//! source/<algo>/<seed>/{checkpoint.json, curve.csv, log.jsonl}
//! target/<env>/<retrain_algo>/<arm>/<seed>/{curve.csv, log.jsonl, checkpoint.json, transplant.json}
//! summary.json
//! ```
//!
//! Each of these leaf directories is a cell. A cell's files are written
//! atomically and only then recorded in the manifest, so an interrupted run
//! resumes by re-running unrecorded cells; every file is a pure function of
//! the plan, so the resumed directory matches an uninterrupted one.
//!
//! Random streams: source cells use the seed itself. Target cells use
//! `mix_label(mix_label(seed, env_id), retrain_algo)`, shared by the three
//! arms so they see the same latent and action draws and differ only in
//! initialisation. The scratch arm is exactly a standalone training run
//! with that derived seed.

mod curves;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{config_hash, Checkpoint, CheckpointError, Metadata};
use crate::env::{EnvConfig, EnvError, Environment};
use crate::io::atomic_write;
use crate::policy::{ModelSpec, PolicyModel};
use crate::rng::{mix_label, Streams};
use crate::trainers::{write_jsonl, Algorithm, TrainConfig, TrainError, Trainer, UpdateRecord};

pub use curves::{
    aggregate_curves, curve_csv, median, median_updates, parse_curve_csv, smooth, updates_to_threshold, AggregateCurve,
    SUSTAIN,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("invalid transfer plan: {0}")]
    Plan(String),
    #[error("curve error: {0}")]
    Curve(String),
    #[error("nothing transferred: no parameter matches the target model by name and shape")]
    NothingTransferred,
    #[error("source checkpoint missing at {0}")]
    MissingSource(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TransferError + '_ {
    move |source| TransferError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    PretrainedVfunc,
    PretrainedPg,
    Scratch,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::PretrainedVfunc, Arm::PretrainedPg, Arm::Scratch];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PretrainedVfunc => "pretrained-vfunc",
            Self::PretrainedPg => "pretrained-pg",
            Self::Scratch => "scratch",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_threshold() -> f64 {
    0.8
}

fn default_window() -> usize {
    10
}

fn default_arms() -> Vec<Arm> {
    Arm::ALL.to_vec()
}

/// A full experiment. `source_train.algorithm` names the policy-gradient
/// family of the two source runs (its entropy-bound variant and its plain
/// variant); `target_train.algorithm` is replaced by each retrain
/// algorithm. The update budgets are the configs' `total_updates`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferPlan {
    pub source: EnvConfig,
    pub targets: Vec<EnvConfig>,
    #[serde(default)]
    pub model: ModelSpec,
    pub source_train: TrainConfig,
    pub target_train: TrainConfig,
    pub retrain_algorithms: Vec<Algorithm>,
    #[serde(default = "default_arms")]
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Smoothing window for threshold detection.
    #[serde(default = "default_window")]
    pub window: usize,
}

impl TransferPlan {
    pub fn validate(&self) -> Result<(), TransferError> {
        let bad = |m: &str| Err(TransferError::Plan(m.to_string()));
        fn distinct<T: Ord>(v: &[T]) -> bool {
            v.iter().collect::<BTreeSet<_>>().len() == v.len()
        }
        if self.seeds.is_empty() || !distinct(&self.seeds) {
            return bad("seeds must be non-empty and distinct");
        }
        if self.targets.is_empty() {
            return bad("at least one target is required");
        }
        let ids: Vec<&str> = self.targets.iter().map(EnvConfig::id).collect();
        if !distinct(&ids) {
            return bad("target ids must be distinct");
        }
        if self.retrain_algorithms.is_empty() || !distinct(&self.retrain_algorithms) {
            return bad("retrain_algorithms must be non-empty and distinct");
        }
        if self.arms.is_empty() || !distinct(&self.arms) {
            return bad("arms must be non-empty and distinct");
        }
        if self.window == 0 {
            return bad("window must be positive");
        }
        if !self.threshold.is_finite() {
            return bad("threshold must be finite");
        }
        self.model.validate().map_err(TransferError::Plan)?;
        for cfg in [&self.source_train, &self.target_train] {
            let mut c = cfg.clone();
            c.algorithm = c.algorithm.with_vfunc();
            c.validate()?;
        }
        Ok(())
    }

    /// Source algorithms: the entropy-bound variant first.
    pub fn source_algorithms(&self) -> [Algorithm; 2] {
        let a = self.source_train.algorithm;
        [a.with_vfunc(), a.base()]
    }

    fn source_for(&self, arm: Arm) -> Option<Algorithm> {
        match arm {
            Arm::PretrainedVfunc => Some(self.source_algorithms()[0]),
            Arm::PretrainedPg => Some(self.source_algorithms()[1]),
            Arm::Scratch => None,
        }
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for algo in self.source_algorithms() {
                out.push(Cell::Source { algo, seed });
            }
        }
        for (target, _) in self.targets.iter().enumerate() {
            for &retrain in &self.retrain_algorithms {
                for &arm in &self.arms {
                    for &seed in &self.seeds {
                        out.push(Cell::Target {
                            target,
                            retrain,
                            arm,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn target_cell_seed(&self, target: usize, retrain: Algorithm, seed: u64) -> u64 {
        mix_label(mix_label(seed, self.targets[target].id()), retrain.as_str())
    }

    fn target_config(&self, retrain: Algorithm) -> TrainConfig {
        let mut c = self.target_train.clone();
        c.algorithm = retrain;
        c
    }

    fn source_config(&self, algo: Algorithm) -> TrainConfig {
        let mut c = self.source_train.clone();
        c.algorithm = algo;
        c
    }
}

/// One unit of resumable work.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Source {
        algo: Algorithm,
        seed: u64,
    },
    Target {
        target: usize,
        retrain: Algorithm,
        arm: Arm,
        seed: u64,
    },
}

impl Cell {
    /// Directory of the cell relative to the experiment root; also its
    /// manifest key.
    pub fn key(&self, plan: &TransferPlan) -> String {
        match *self {
            Cell::Source { algo, seed } => format!("source/{algo}/{seed}"),
            Cell::Target {
                target,
                retrain,
                arm,
                seed,
            } => format!("target/{}/{retrain}/{arm}/{seed}", plan.targets[target].id()),
        }
    }
}

/// Copied, freshly initialised and discarded entries of a transplant.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransplantReport {
    pub copied: Vec<String>,
    pub reinitialized: Vec<String>,
    pub dropped: Vec<String>,
}

/// Copies every source parameter whose name and shape match an entry of
/// `target`; the rest of `target` keeps its fresh initialisation.
pub fn transplant(source: &PolicyModel, target: &mut PolicyModel) -> Result<TransplantReport, TransferError> {
    let mut report = TransplantReport::default();
    let names: Vec<String> = target.params.names().map(String::from).collect();
    for name in names {
        let fits = source
            .params
            .get(&name)
            .filter(|s| s.shape() == target.params.get(&name).map(|t| t.shape()).unwrap_or(&[]));
        match fits {
            Some(t) => {
                target.params.insert(&name, t.clone());
                report.copied.push(name);
            }
            None => report.reinitialized.push(name),
        }
    }
    report.dropped = source
        .params
        .names()
        .filter(|n| !report.copied.iter().any(|c| c == n))
        .map(String::from)
        .collect();
    if report.copied.is_empty() {
        return Err(TransferError::NothingTransferred);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    plan_hash: String,
    plan: TransferPlan,
    completed: BTreeSet<String>,
}

/// Controls for [`run_transfer`].
#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Worker threads for independent cells.
    pub jobs: usize,
    /// Do not train source cells; pretrained arms use whatever checkpoints
    /// exist.
    pub skip_source: bool,
    /// Stop after executing this many cells (simulates an interruption).
    pub max_cells: Option<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            skip_source: false,
            max_cells: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub target: String,
    pub retrain: Algorithm,
    pub arm: Arm,
    pub n_seeds: usize,
    /// Per-seed updates to threshold on each seed's smoothed curve.
    pub per_seed: Vec<Option<usize>>,
    /// Median of `per_seed`, with never-reached counting as slowest.
    pub median_updates_to_threshold: Option<usize>,
    /// Updates to threshold of the across-seed mean curve.
    pub aggregate_updates_to_threshold: Option<usize>,
    /// Median over seeds of the mean of each seed's last `window` updates.
    pub median_final_return: f64,
}

#[derive(Debug, Default)]
pub struct TransferReport {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
    pub warnings: Vec<String>,
    /// Present once every target cell has completed.
    pub summary: Option<Vec<ArmSummary>>,
}

impl TransferReport {
    pub fn all_complete(&self) -> bool {
        self.failed.is_empty() && self.summary.is_some()
    }
}

struct Experiment<'a> {
    plan: &'a TransferPlan,
    root: &'a Path,
}

impl Experiment<'_> {
    fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    fn with_manifest<T>(&self, f: impl FnOnce(&mut Manifest) -> T) -> Result<T, TransferError> {
        let lock_path = self.root.join("manifest.lock");
        let lock = fs::OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io_err(&lock_path))?;
        lock.lock().map_err(io_err(&lock_path))?;
        let path = self.manifest_path();
        let mut manifest = self.read_manifest()?.unwrap_or_else(|| Manifest {
            format_version: MANIFEST_VERSION,
            plan_hash: config_hash(self.plan),
            plan: self.plan.clone(),
            completed: BTreeSet::new(),
        });
        let before = manifest.clone();
        let out = f(&mut manifest);
        if manifest != before || !path.exists() {
            let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
            text.push('\n');
            atomic_write(&path, text.as_bytes()).map_err(io_err(&path))?;
        }
        drop(lock);
        Ok(out)
    }

    fn read_manifest(&self) -> Result<Option<Manifest>, TransferError> {
        let path = self.manifest_path();
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| TransferError::Manifest(e.to_string())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    fn cell_dir(&self, cell: &Cell) -> PathBuf {
        self.root.join(cell.key(self.plan))
    }

    fn source_checkpoint(&self, algo: Algorithm, seed: u64) -> PathBuf {
        self.cell_dir(&Cell::Source { algo, seed }).join("checkpoint.json")
    }

    fn write(&self, path: &Path, text: &str) -> Result<(), TransferError> {
        atomic_write(path, text.as_bytes()).map_err(io_err(path))
    }

    /// Runs one cell; returns warnings.
    fn run_cell(&self, cell: &Cell) -> Result<Vec<String>, TransferError> {
        let plan = self.plan;
        let dir = self.cell_dir(cell);
        let mut warnings = Vec::new();
        match *cell {
            Cell::Source { algo, seed } => {
                let env = plan.source.build()?;
                let cfg = plan.source_config(algo);
                let base = plan.model.for_env(env.obs_dim(), env.action_count());
                let mut trainer = Trainer::new(&env, cfg.clone(), &base, seed)?;
                let records = trainer.run(|_, _| Ok(()))?;
                write_run_artifacts(&dir, plan.source.id(), &cfg, seed, trainer.model, &records)?;
            }
            Cell::Target {
                target,
                retrain,
                arm,
                seed,
            } => {
                let env_cfg = &plan.targets[target];
                let env = env_cfg.build()?;
                let cfg = plan.target_config(retrain);
                let base = plan.model.for_env(env.obs_dim(), env.action_count());
                let cell_seed = plan.target_cell_seed(target, retrain, seed);
                let mut streams = Streams::new(cell_seed);
                let mut model = PolicyModel::new(cfg.model_config(&base), &mut streams.init);
                if let Some(src_algo) = plan.source_for(arm) {
                    let path = self.source_checkpoint(src_algo, seed);
                    if !path.exists() {
                        return Err(TransferError::MissingSource(path.display().to_string()));
                    }
                    let ck = Checkpoint::load(&path)?;
                    let expected = config_hash(&plan.source_config(src_algo));
                    warnings.extend(ck.hash_warning(&expected).map(|w| format!("{}: {w}", path.display())));
                    let report = transplant(&ck.model, &mut model)?;
                    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
                    text.push('\n');
                    self.write(&dir.join("transplant.json"), &text)?;
                }
                let mut trainer = Trainer::with_model(&env, cfg.clone(), model, streams)?;
                let records = trainer.run(|_, _| Ok(()))?;
                write_run_artifacts(&dir, env_cfg.id(), &cfg, cell_seed, trainer.model, &records)?;
            }
        }
        Ok(warnings)
    }
}

/// Writes `curve.csv`, `log.jsonl` and `checkpoint.json` for one finished
/// training run into `dir`.
pub fn write_run_artifacts(
    dir: &Path,
    env_id: &str,
    cfg: &TrainConfig,
    seed: u64,
    model: PolicyModel,
    records: &[UpdateRecord],
) -> Result<(), TransferError> {
    let curve: Vec<f64> = records.iter().map(|r| r.mean_cumulative_reward).collect();
    let curve_path = dir.join("curve.csv");
    atomic_write(&curve_path, curve_csv(&curve).as_bytes()).map_err(io_err(&curve_path))?;
    let mut log = Vec::new();
    write_jsonl(records, &mut log).map_err(io_err(dir))?;
    let log_path = dir.join("log.jsonl");
    atomic_write(&log_path, &log).map_err(io_err(&log_path))?;
    let metadata = Metadata {
        env: env_id.to_string(),
        algorithm: cfg.algorithm.to_string(),
        lambda: cfg.lambda,
        gamma: cfg.gamma,
        seed,
        updates: records.len(),
        config_hash: config_hash(cfg),
    };
    Checkpoint::new(metadata, model).save(&dir.join("checkpoint.json"))?;
    Ok(())
}

/// Reads the raw curve of one cell.
pub fn read_curve(root: &Path, key: &str) -> Result<Vec<f64>, TransferError> {
    let path = root.join(key).join("curve.csv");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    parse_curve_csv(&text)
}

/// Per-arm statistics over the seeds of a completed plan.
pub fn summarize(plan: &TransferPlan, root: &Path) -> Result<Vec<ArmSummary>, TransferError> {
    let mut out = Vec::new();
    for (t, env) in plan.targets.iter().enumerate() {
        for &retrain in &plan.retrain_algorithms {
            for &arm in &plan.arms {
                let curves = plan
                    .seeds
                    .iter()
                    .map(|&seed| {
                        let cell = Cell::Target {
                            target: t,
                            retrain,
                            arm,
                            seed,
                        };
                        read_curve(root, &cell.key(plan))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                out.push(summarize_arm(
                    env.id(),
                    retrain,
                    arm,
                    &curves,
                    plan.threshold,
                    plan.window,
                )?);
            }
        }
    }
    Ok(out)
}

pub fn summarize_arm(
    target: &str,
    retrain: Algorithm,
    arm: Arm,
    curves: &[Vec<f64>],
    threshold: f64,
    window: usize,
) -> Result<ArmSummary, TransferError> {
    let per_seed = curves
        .iter()
        .map(|c| {
            Ok(updates_to_threshold(
                &aggregate_curves(std::slice::from_ref(c), window)?,
                threshold,
            ))
        })
        .collect::<Result<Vec<_>, TransferError>>()?;
    let agg = aggregate_curves(curves, window)?;
    let finals: Vec<f64> = curves
        .iter()
        .map(|c| {
            let tail = &c[c.len().saturating_sub(window)..];
            tail.iter().sum::<f64>() / tail.len().max(1) as f64
        })
        .collect();
    Ok(ArmSummary {
        target: target.to_string(),
        retrain,
        arm,
        n_seeds: curves.len(),
        median_updates_to_threshold: median_updates(&per_seed),
        per_seed,
        aggregate_updates_to_threshold: updates_to_threshold(&agg, threshold),
        median_final_return: median(&finals),
    })
}

/// Fixed-width table of summaries.
pub fn summary_table(rows: &[ArmSummary]) -> String {
    let fmt_opt = |v: Option<usize>| v.map_or("never".to_string(), |x| x.to_string());
    let mut s = format!(
        "{:<12} {:<16} {:<17} {:>16} {:>16} {:>12}\n",
        "target", "retrain", "arm", "median_updates", "mean_curve_upd", "final_return"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<12} {:<16} {:<17} {:>16} {:>16} {:>12.4}\n",
            r.target,
            r.retrain.as_str(),
            r.arm.as_str(),
            fmt_opt(r.median_updates_to_threshold),
            fmt_opt(r.aggregate_updates_to_threshold),
            r.median_final_return
        ));
    }
    s
}

/// Runs every cell of `plan` not yet recorded in `root/manifest.json`.
pub fn run_transfer(plan: &TransferPlan, root: &Path, opts: &RunOptions) -> Result<TransferReport, TransferError> {
    plan.validate()?;
    for env in std::iter::once(&plan.source).chain(&plan.targets) {
        env.build()?;
    }
    fs::create_dir_all(root).map_err(io_err(root))?;
    let exp = Experiment { plan, root };
    let mut report = TransferReport::default();

    let plan_hash = config_hash(plan);
    let (completed, mismatch) = exp.with_manifest(|m| (m.completed.clone(), m.plan_hash != plan_hash))?;
    if mismatch {
        report
            .warnings
            .push("plan differs from the one recorded in manifest.json; completed cells are kept".into());
    }

    let cells = plan.cells();
    let (sources, targets): (Vec<Cell>, Vec<Cell>) = cells.into_iter().partition(|c| matches!(c, Cell::Source { .. }));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| TransferError::Plan(format!("thread pool: {e}")))?;
    let mut budget = opts.max_cells.unwrap_or(usize::MAX);

    for (phase, phase_cells) in [("source", sources), ("target", targets)] {
        let mut todo = Vec::new();
        for cell in phase_cells {
            let key = cell.key(plan);
            if completed.contains(&key) || (phase == "source" && opts.skip_source) {
                report.skipped.push(key);
            } else if budget > 0 {
                budget -= 1;
                todo.push(cell);
            }
        }
        let results: Vec<(String, Result<Vec<String>, TransferError>)> = pool.install(|| {
            todo.par_iter()
                .map(|cell| {
                    let key = cell.key(plan);
                    let r = exp.run_cell(cell).and_then(|w| {
                        exp.with_manifest(|m| {
                            m.completed.insert(key.clone());
                        })?;
                        Ok(w)
                    });
                    (key, r)
                })
                .collect()
        });
        for (key, r) in results {
            match r {
                Ok(w) => {
                    report.warnings.extend(w);
                    report.executed.push(key);
                }
                Err(e) => report.failed.push((key, e.to_string())),
            }
        }
    }

    let finished = exp.with_manifest(|m| m.completed.clone())?;
    let all_targets = plan
        .cells()
        .iter()
        .filter(|c| matches!(c, Cell::Target { .. }))
        .all(|c| finished.contains(&c.key(plan)));
    if all_targets {
        let summary = summarize(plan, root)?;
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        exp.write(&root.join("summary.json"), &text)?;
        report.summary = Some(summary);
    }
    Ok(report)
}

/// Reads the plan recorded in an experiment directory.
pub fn recorded_plan(root: &Path) -> Result<TransferPlan, TransferError> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| TransferError::Manifest(e.to_string()))?;
    Ok(m.plan)
}
