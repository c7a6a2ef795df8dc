//! Policy-gradient training with an optional entropy-bound regulariser.
//!
//! Each update collects `E * P` episodes, each under its own latent drawn
//! once at episode start, and takes one Adam step on
//!
//! ```text
//! loss = pg_loss + value_loss - prior - λ * bound
//! ```
//!
//! The policy term is normalised by the number of episodes, so it is an
//! unbiased estimate of the gradient of the expected episode return.

mod losses;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{AdamConfig, DiffError, Graph, NodeId, Tensor};
use crate::env::{EnvError, Environment};
use crate::policy::{
    build_entropy_bound, sample_categorical, InputSampler, ModelConfig, ObsBuffer, PolicyError, PolicyModel,
    DEFAULT_BUFFER_CAPACITY,
};
use crate::rng::{Rng, Streams};

pub use losses::{a2c_loss, function_prior, reinforce_loss, returns_to_go, Baseline, PgNodes, StepBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "reinforce")]
    Reinforce,
    #[serde(rename = "a2c")]
    A2c,
    #[serde(rename = "vfunc+reinforce")]
    VfuncReinforce,
    #[serde(rename = "vfunc+a2c")]
    VfuncA2c,
}

impl Algorithm {
    pub const ALL: [Self; 4] = [Self::Reinforce, Self::A2c, Self::VfuncReinforce, Self::VfuncA2c];

    pub fn is_vfunc(self) -> bool {
        matches!(self, Self::VfuncReinforce | Self::VfuncA2c)
    }

    pub fn uses_critic(self) -> bool {
        matches!(self, Self::A2c | Self::VfuncA2c)
    }

    /// Same policy-gradient estimator without the entropy bound.
    pub fn base(self) -> Self {
        match self {
            Self::VfuncReinforce => Self::Reinforce,
            Self::VfuncA2c => Self::A2c,
            other => other,
        }
    }

    pub fn with_vfunc(self) -> Self {
        match self {
            Self::Reinforce => Self::VfuncReinforce,
            Self::A2c => Self::VfuncA2c,
            other => other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Reinforce => "reinforce",
            Self::A2c => "a2c",
            Self::VfuncReinforce => "vfunc+reinforce",
            Self::VfuncA2c => "vfunc+a2c",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub lambda: f64,
    pub prior_coeff: f64,
    pub gamma: f64,
    pub lr: f64,
    pub episodes_per_update: usize,
    pub n_parallel_envs: usize,
    pub value_coeff: f64,
    /// Pairs per partial function.
    pub k: usize,
    /// Latent samples per bound estimate.
    pub m: usize,
    pub total_updates: usize,
    /// Observation buffer size for environments without an enumerable
    /// input space.
    pub buffer_capacity: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::VfuncReinforce,
            lambda: 0.1,
            prior_coeff: 0.0,
            gamma: 0.99,
            lr: 3e-4,
            episodes_per_update: 8,
            n_parallel_envs: 4,
            value_coeff: 0.5,
            k: 32,
            m: 8,
            total_updates: 500,
            buffer_capacity: DEFAULT_BUFFER_CAPACITY,
        }
    }
}

impl TrainConfig {
    pub fn batch_episodes(&self) -> usize {
        self.episodes_per_update * self.n_parallel_envs
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| Err(TrainError::Config(what.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if !(self.prior_coeff >= 0.0 && self.prior_coeff.is_finite()) {
            return bad("prior_coeff must be non-negative");
        }
        if !(self.value_coeff >= 0.0 && self.value_coeff.is_finite()) {
            return bad("value_coeff must be non-negative");
        }
        if self.episodes_per_update == 0 || self.n_parallel_envs == 0 {
            return bad("episodes_per_update and n_parallel_envs must be positive");
        }
        if self.algorithm.is_vfunc() && (self.k == 0 || self.m < 2) {
            return bad("vfunc needs k >= 1 and m >= 2");
        }
        Ok(())
    }

    /// Model heads this algorithm needs on top of `base`.
    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        let mut cfg = base.clone();
        cfg.value_head = self.algorithm.uses_critic();
        cfg.recognition = self.algorithm.is_vfunc();
        cfg
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("model lacks {0}")]
    Model(&'static str),
    #[error("non-finite objective at update {}", .0.update_index)]
    NonFinite(Box<UpdateRecord>),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub reward: f64,
    pub value: Option<f64>,
}

/// One episode under a single latent.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub episode_index: u64,
    pub z: Vec<f64>,
    pub steps: Vec<Step>,
    pub total_return: f64,
}

impl Trajectory {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }
}

/// Per-update log entry, one JSON object per line in `log.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update_index: usize,
    pub mean_cumulative_reward: f64,
    pub mean_episode_length: f64,
    pub pg_loss: f64,
    pub value_loss: f64,
    pub prior: f64,
    pub bound: Option<f64>,
    pub cross_term: Option<f64>,
    pub h_f_given_z: Option<f64>,
    pub bound_std_error: Option<f64>,
    pub objective: f64,
}

impl UpdateRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.mean_cumulative_reward,
            self.pg_loss,
            self.value_loss,
            self.prior,
            self.objective,
        ]
        .iter()
        .chain(self.bound.iter())
        .chain(self.cross_term.iter())
        .chain(self.h_f_given_z.iter())
        .all(|v| v.is_finite())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Runs `n` episodes in lockstep, batching the network forward pass across
/// all unfinished episodes. Latents are drawn in episode order before the
/// first step; actions are drawn in episode order at every step.
pub fn collect_rollouts<E: Environment>(
    env: &E,
    model: &PolicyModel,
    n: usize,
    first_episode: u64,
    latent_rng: &mut Rng,
    action_rng: &mut Rng,
) -> Result<Vec<Trajectory>, TrainError> {
    let cfg = &model.config;
    if env.obs_dim() != cfg.obs_dim || env.action_count() != cfg.action_count {
        return Err(TrainError::Model("dimensions matching the environment"));
    }
    let prior = model.prior();
    let mut trajs: Vec<Trajectory> = (0..n)
        .map(|i| Trajectory {
            episode_index: first_episode + i as u64,
            z: prior.sample(latent_rng),
            steps: Vec::new(),
            total_return: 0.0,
        })
        .collect();
    let mut states: Vec<Option<E::State>> = trajs.iter().map(|t| Some(env.reset(t.episode_index))).collect();

    loop {
        let active: Vec<usize> = (0..n).filter(|&i| states[i].is_some()).collect();
        if active.is_empty() {
            break;
        }
        let mut obs_data = Vec::with_capacity(active.len() * cfg.obs_dim);
        let mut z_data = Vec::with_capacity(active.len() * cfg.latent_dim);
        let mut obs_rows = Vec::with_capacity(active.len());
        for &i in &active {
            let o = env.observe(states[i].as_ref().unwrap());
            obs_data.extend_from_slice(&o);
            obs_rows.push(o);
            z_data.extend_from_slice(&trajs[i].z);
        }
        let obs = Tensor::new(vec![active.len(), cfg.obs_dim], obs_data).map_err(PolicyError::from)?;
        let zs = Tensor::new(vec![active.len(), cfg.latent_dim], z_data).map_err(PolicyError::from)?;
        let (logits, values) = model.heads_batch(&obs, &zs);
        let probs = logits.softmax_rows();
        let log_probs = logits.log_softmax_rows();
        for (row, (&i, o)) in active.iter().zip(obs_rows).enumerate() {
            let a = sample_categorical(probs.row(row), action_rng);
            let t = env.step(states[i].as_ref().unwrap(), a)?;
            let traj = &mut trajs[i];
            traj.total_return += t.reward;
            traj.steps.push(Step {
                obs: o,
                action: a,
                log_prob: log_probs.row(row)[a],
                reward: t.reward,
                value: values.as_ref().map(|v| v[row]),
            });
            states[i] = if t.done { None } else { Some(t.state) };
        }
    }
    Ok(trajs)
}

/// Training state; one [`Trainer::update`] call is one optimizer step.
pub struct Trainer<'a, E: Environment> {
    pub env: &'a E,
    pub config: TrainConfig,
    pub model: PolicyModel,
    pub streams: Streams,
    pub sampler: InputSampler,
    pub updates_done: usize,
    adam: AdamConfig,
}

impl<'a, E: Environment> Trainer<'a, E> {
    /// Fresh model initialised from the seed's init stream.
    pub fn new(env: &'a E, config: TrainConfig, base: &ModelConfig, seed: u64) -> Result<Self, TrainError> {
        let mut streams = Streams::new(seed);
        let model = PolicyModel::new(config.model_config(base), &mut streams.init);
        Self::with_model(env, config, model, streams)
    }

    /// Starts from given parameters; the init stream is left untouched.
    pub fn with_model(
        env: &'a E,
        config: TrainConfig,
        model: PolicyModel,
        streams: Streams,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if config.algorithm.uses_critic() && !model.config.value_head {
            return Err(TrainError::Model("a value head"));
        }
        if config.algorithm.is_vfunc() && !model.config.recognition {
            return Err(TrainError::Model("a recognition network"));
        }
        let sampler = match env.input_space() {
            Some(space) => InputSampler::Uniform(space),
            None => InputSampler::Buffer(ObsBuffer::new(config.buffer_capacity)),
        };
        let adam = AdamConfig::with_lr(config.lr);
        Ok(Self {
            env,
            config,
            model,
            streams,
            sampler,
            updates_done: 0,
            adam,
        })
    }

    /// Collect, evaluate the objective, take one Adam step.
    pub fn update(&mut self) -> Result<UpdateRecord, TrainError> {
        let cfg = &self.config;
        let n = cfg.batch_episodes();
        let first = (self.updates_done * n) as u64;
        let trajs = collect_rollouts(
            self.env,
            &self.model,
            n,
            first,
            &mut self.streams.latent,
            &mut self.streams.action,
        )?;
        for t in &trajs {
            for s in &t.steps {
                self.sampler.observe(&s.obs);
            }
        }

        let mc = &self.model.config;
        let mut g = Graph::new();
        let batch = StepBatch::new(&trajs, mc, cfg.gamma)?;
        let pg = if cfg.algorithm.uses_critic() {
            a2c_loss(&mut g, &self.model, &batch, cfg.value_coeff)?
        } else {
            reinforce_loss(&mut g, mc, &batch, Baseline::BatchMean)?
        };
        let prior = function_prior(&mut g, &self.model.params, cfg.prior_coeff)?;
        let mut loss = g.sub(pg.total, prior)?;
        let bound_nodes = if cfg.algorithm.is_vfunc() {
            let bb = self
                .model
                .sample_bound_batch(&self.sampler, cfg.k, cfg.m, &mut self.streams.bound)?;
            let nodes = build_entropy_bound(&mut g, mc, &bb)?;
            if cfg.lambda > 0.0 {
                let weighted = g.scale(nodes.objective, cfg.lambda);
                loss = g.sub(loss, weighted)?;
            }
            g.mark_output("bound", nodes.bound);
            g.mark_output("log_q", nodes.log_q);
            Some(nodes)
        } else {
            None
        };
        g.mark_output("loss", loss);
        g.mark_output("pg_loss", pg.pg_loss);
        g.mark_output("value_loss", pg.value_loss);
        g.mark_output("prior", prior);

        let names: Vec<String> = g.params().keys().cloned().collect();
        let wrt: Vec<NodeId> = names.iter().map(|n| g.params()[n]).collect();
        let grad_ids = g.gradients(loss, &wrt)?;
        let values = g.evaluate(&self.model.params, &HashMap::new())?;
        let grads: BTreeMap<String, Tensor> = names
            .into_iter()
            .zip(grad_ids)
            .map(|(n, id)| (n, values.get(id).clone()))
            .collect();
        let estimate = bound_nodes.map(|b| b.estimate(&values, &self.model.prior()));

        let total_steps: usize = trajs.iter().map(|t| t.steps.len()).sum();
        let record = UpdateRecord {
            update_index: self.updates_done,
            mean_cumulative_reward: trajs.iter().map(|t| t.total_return).sum::<f64>() / n as f64,
            mean_episode_length: total_steps as f64 / n as f64,
            pg_loss: values.scalar(pg.pg_loss),
            value_loss: values.scalar(pg.value_loss),
            prior: values.scalar(prior),
            bound: estimate.as_ref().map(|e| e.bound),
            cross_term: estimate.as_ref().map(|e| e.cross_term),
            h_f_given_z: estimate.as_ref().map(|e| e.h_f_given_z),
            bound_std_error: estimate.as_ref().map(|e| e.std_error),
            objective: -values.scalar(loss),
        };
        let grads_finite = grads.values().all(Tensor::is_finite);
        if !record.is_finite() || !grads_finite {
            return Err(TrainError::NonFinite(Box::new(record)));
        }

        let mut full = grads;
        for (name, t) in self.model.params.iter() {
            full.entry(name.to_string()).or_insert_with(|| Tensor::zeros(t.shape()));
        }
        self.model.params.adam_step(&full, &self.adam)?;
        self.updates_done += 1;
        Ok(record)
    }

    /// Runs the remaining updates up to `total_updates`, calling `hook`
    /// after each one.
    pub fn run(
        &mut self,
        mut hook: impl FnMut(&UpdateRecord, &PolicyModel) -> Result<(), TrainError>,
    ) -> Result<Vec<UpdateRecord>, TrainError> {
        let mut records = Vec::with_capacity(self.config.total_updates);
        while self.updates_done < self.config.total_updates {
            let r = self.update()?;
            hook(&r, &self.model)?;
            records.push(r);
        }
        Ok(records)
    }
}

/// Trains a fresh model for `total_updates` updates.
pub fn train<E: Environment>(
    env: &E,
    config: &TrainConfig,
    base: &ModelConfig,
    seed: u64,
    hook: impl FnMut(&UpdateRecord, &PolicyModel) -> Result<(), TrainError>,
) -> Result<(PolicyModel, Vec<UpdateRecord>), TrainError> {
    let mut t = Trainer::new(env, config.clone(), base, seed)?;
    let records = t.run(hook)?;
    Ok((t.model, records))
}

pub fn write_jsonl(records: &[UpdateRecord], out: &mut impl Write) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", r.to_json_line())?;
    }
    Ok(())
}
