//! Latent-conditioned policies and the variational entropy bound.
//!
//! A policy is sampled by drawing `z ~ N(0, I)` and conditioning the
//! prediction network on it. The recognition network reads a partial
//! function `f̂ = {(x_k, y_k)}` through the gradient, at the fixed latent
//! `z̄ = 0`, of the summed cross-entropy of its labels, and outputs a
//! diagonal Gaussian `q(z | f̂)`. The entropy of the function distribution is
//! then bounded below by `H(z) + E[log q(z | f̂)] + H(f̂ | z)`.
//!
//! All networks live in one [`ParamSet`]:
//!
//! | prefix    | network                                  |
//! |-----------|------------------------------------------|
//! | `pi.h{i}` | prediction hidden layers (tanh)          |
//! | `pi.out`  | prediction logits, zero-initialised      |
//! | `v.out`   | value head on the last hidden layer      |
//! | `rq.h{i}` | recognition hidden layers (tanh)         |
//! | `rq.mu`   | recognition mean                         |
//! | `rq.ls`   | recognition log-sigma, clamped to [-5, 2] |

mod sampler;
#[cfg(test)]
mod tests;

use std::collections::HashMap;
use std::f64::consts::{E, PI};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Graph, NodeId, ParamSet, Tensor, Values};
use crate::rng::Rng;

pub use sampler::{InputSampler, ObsBuffer, DEFAULT_BUFFER_CAPACITY};

pub const LOG_SIGMA_MIN: f64 = -5.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("{what} has length {got}, expected {expected}")]
    Dim {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("partial function is empty")]
    EmptyFunction,
    #[error("input sampler has no observations")]
    EmptySampler,
    #[error("model has no {0}")]
    Missing(&'static str),
    #[error("need at least {min} latent samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("parameter set does not match the model layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), PolicyError> {
    if expected == got {
        Ok(())
    } else {
        Err(PolicyError::Dim { what, expected, got })
    }
}

/// Standard normal prior over `dim` latent coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentPrior {
    pub dim: usize,
}

impl LatentPrior {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    /// `(d/2) ln(2πe)`.
    pub fn entropy(&self) -> f64 {
        0.5 * self.dim as f64 * (2.0 * PI * E).ln()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.dim).map(|_| StandardNormal.sample(rng)).collect()
    }
}

/// Network layout. `obs_dim` and `action_count` come from the environment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub obs_dim: usize,
    pub action_count: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub recog_hidden: Vec<usize>,
    pub value_head: bool,
    pub recognition: bool,
}

impl ModelConfig {
    pub fn new(obs_dim: usize, action_count: usize) -> Self {
        Self {
            obs_dim,
            action_count,
            latent_dim: 8,
            hidden: vec![128, 128],
            recog_hidden: vec![64],
            value_head: false,
            recognition: false,
        }
    }

    fn trunk_width(&self) -> usize {
        self.hidden.last().copied().unwrap_or(self.obs_dim + self.latent_dim)
    }
}

/// The environment-independent part of [`ModelConfig`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub recog_hidden: Vec<usize>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let c = ModelConfig::new(0, 0);
        Self {
            latent_dim: c.latent_dim,
            hidden: c.hidden,
            recog_hidden: c.recog_hidden,
        }
    }
}

impl ModelSpec {
    /// Base config without optional heads; trainers add the heads they need.
    pub fn for_env(&self, obs_dim: usize, action_count: usize) -> ModelConfig {
        ModelConfig {
            obs_dim,
            action_count,
            latent_dim: self.latent_dim,
            hidden: self.hidden.clone(),
            recog_hidden: self.recog_hidden.clone(),
            value_head: false,
            recognition: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.latent_dim == 0 {
            return Err("latent_dim must be positive".into());
        }
        if self.hidden.contains(&0) || self.recog_hidden.contains(&0) {
            return Err("hidden layer widths must be positive".into());
        }
        Ok(())
    }
}

/// Categorical action distribution for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDist {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl ActionDist {
    pub fn greedy(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, lp)| if *p > 0.0 { p * lp } else { 0.0 })
            .sum::<f64>()
    }
}

/// Inverse-CDF draw from `probs` with one uniform variate.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Prediction network (plus optional value head and recognition network).
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl PolicyModel {
    /// Initialises prediction layers first, then the value head, then the
    /// recognition network, so models that differ only in optional heads
    /// share identical prediction weights for the same `rng` state.
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Self {
        let mut params = ParamSet::new();
        let mut fan_in = config.obs_dim + config.latent_dim;
        for (i, &h) in config.hidden.iter().enumerate() {
            params.init_linear(&format!("pi.h{i}"), fan_in, h, false, rng);
            fan_in = h;
        }
        params.init_linear("pi.out", fan_in, config.action_count, true, rng);
        if config.value_head {
            params.init_linear("v.out", fan_in, 1, false, rng);
        }
        if config.recognition {
            let mut fan_in = config.latent_dim;
            for (i, &h) in config.recog_hidden.iter().enumerate() {
                params.init_linear(&format!("rq.h{i}"), fan_in, h, false, rng);
                fan_in = h;
            }
            params.init_linear("rq.mu", fan_in, config.latent_dim, false, rng);
            params.init_linear("rq.ls", fan_in, config.latent_dim, false, rng);
        }
        Self { config, params }
    }

    /// Names and shapes every parameter set for `config` must have.
    pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut linear = |prefix: String, fan_in: usize, fan_out: usize| {
            out.push((format!("{prefix}.b"), vec![fan_out]));
            out.push((format!("{prefix}.w"), vec![fan_in, fan_out]));
        };
        let mut fan_in = config.obs_dim + config.latent_dim;
        for (i, &h) in config.hidden.iter().enumerate() {
            linear(format!("pi.h{i}"), fan_in, h);
            fan_in = h;
        }
        linear("pi.out".into(), fan_in, config.action_count);
        if config.value_head {
            linear("v.out".into(), fan_in, 1);
        }
        if config.recognition {
            let mut fan_in = config.latent_dim;
            for (i, &h) in config.recog_hidden.iter().enumerate() {
                linear(format!("rq.h{i}"), fan_in, h);
                fan_in = h;
            }
            linear("rq.mu".into(), fan_in, config.latent_dim);
            linear("rq.ls".into(), fan_in, config.latent_dim);
        }
        out.sort();
        out
    }

    /// Wraps existing parameters after checking them against the layout.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self, PolicyError> {
        let expected = Self::layout(&config);
        let got: Vec<(String, Vec<usize>)> = params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect();
        if expected != got {
            let missing: Vec<&str> = expected
                .iter()
                .filter(|e| !got.contains(e))
                .map(|(n, _)| n.as_str())
                .collect();
            let extra: Vec<&str> = got
                .iter()
                .filter(|g| !expected.contains(g))
                .map(|(n, _)| n.as_str())
                .collect();
            return Err(PolicyError::Layout(format!(
                "missing or misshapen {missing:?}, unexpected {extra:?}"
            )));
        }
        Ok(Self { config, params })
    }

    pub fn prior(&self) -> LatentPrior {
        LatentPrior::new(self.config.latent_dim)
    }

    fn layer(&self, prefix: &str, x: &Tensor) -> Tensor {
        let w = self.params.get(&format!("{prefix}.w")).expect("layer weight");
        let b = self.params.get(&format!("{prefix}.b")).expect("layer bias");
        x.matmul(w).add_row_vector(b)
    }

    fn trunk(&self, obs: &Tensor, z: &Tensor) -> Tensor {
        let mut h = obs.concat_cols(z);
        for i in 0..self.config.hidden.len() {
            h = self.layer(&format!("pi.h{i}"), &h).map(f64::tanh);
        }
        h
    }

    /// Logits for a batch: `obs` is `[n, obs_dim]`, `z` is `[n, d]`.
    pub fn logits_batch(&self, obs: &Tensor, z: &Tensor) -> Tensor {
        self.layer("pi.out", &self.trunk(obs, z))
    }

    /// Logits and, when the model has a value head, state values.
    pub fn heads_batch(&self, obs: &Tensor, z: &Tensor) -> (Tensor, Option<Vec<f64>>) {
        let h = self.trunk(obs, z);
        let logits = self.layer("pi.out", &h);
        let values = self.config.value_head.then(|| self.layer("v.out", &h).into_data());
        (logits, values)
    }

    pub fn policy_forward(&self, obs: &[f64], z: &[f64]) -> Result<ActionDist, PolicyError> {
        check_len("observation", self.config.obs_dim, obs.len())?;
        check_len("latent", self.config.latent_dim, z.len())?;
        let obs = Tensor::new(vec![1, obs.len()], obs.to_vec())?;
        let z = Tensor::new(vec![1, z.len()], z.to_vec())?;
        let logits = self.logits_batch(&obs, &z);
        Ok(ActionDist {
            probs: logits.softmax_rows().into_data(),
            log_probs: logits.log_softmax_rows().into_data(),
        })
    }

    /// Samples `K` inputs and labels `y_k ~ p(y | x_k, z)`.
    pub fn sample_partial_function(
        &self,
        z: &[f64],
        sampler: &InputSampler,
        k: usize,
        rng: &mut Rng,
    ) -> Result<PartialFunction, PolicyError> {
        check_len("latent", self.config.latent_dim, z.len())?;
        let xs = sampler.sample(k, rng)?;
        let obs = rows_tensor(&xs, self.config.obs_dim)?;
        let zs = repeat_row(z, k);
        let probs = self.logits_batch(&obs, &zs).softmax_rows();
        let pairs = xs
            .into_iter()
            .enumerate()
            .map(|(i, x)| {
                let y = sample_categorical(probs.row(i), rng);
                (x, y)
            })
            .collect();
        Ok(PartialFunction { pairs })
    }

    /// `q(z | f̂)` for one partial function.
    pub fn encode_function(&self, f: &PartialFunction) -> Result<Encoding, PolicyError> {
        if !self.config.recognition {
            return Err(PolicyError::Missing("recognition network"));
        }
        if f.pairs.is_empty() {
            return Err(PolicyError::EmptyFunction);
        }
        let xs: Vec<Vec<f64>> = f.pairs.iter().map(|(x, _)| x.clone()).collect();
        let labels: Vec<usize> = f.pairs.iter().map(|(_, y)| *y).collect();
        for &y in &labels {
            if y >= self.config.action_count {
                return Err(PolicyError::Dim {
                    what: "action label",
                    expected: self.config.action_count,
                    got: y,
                });
            }
        }
        let obs = rows_tensor(&xs, self.config.obs_dim)?;
        let mut g = Graph::new();
        let x = g.constant(obs);
        let enc = build_encoding(&mut g, &self.config, x, &labels, 1, f.pairs.len())?;
        let values = g.evaluate(&self.params, &HashMap::new())?;
        Ok(Encoding {
            feature: values.get(enc.feature).data().to_vec(),
            mu: values.get(enc.mu).data().to_vec(),
            log_sigma: values.get(enc.log_sigma).data().to_vec(),
        })
    }

    /// Draws `M` latents and their partial functions for the bound.
    pub fn sample_bound_batch(
        &self,
        sampler: &InputSampler,
        k: usize,
        m: usize,
        rng: &mut Rng,
    ) -> Result<BoundBatch, PolicyError> {
        let prior = self.prior();
        let mut z = Vec::with_capacity(m * prior.dim);
        let mut xs = Vec::with_capacity(m * k);
        let mut labels = Vec::with_capacity(m * k);
        for _ in 0..m {
            let zi = prior.sample(rng);
            let f = self.sample_partial_function(&zi, sampler, k, rng)?;
            z.extend_from_slice(&zi);
            for (x, y) in f.pairs {
                xs.push(x);
                labels.push(y);
            }
        }
        Ok(BoundBatch {
            z: Tensor::new(vec![m, prior.dim], z)?,
            xs: rows_tensor(&xs, self.config.obs_dim)?,
            labels,
            k,
        })
    }

    /// Monte-Carlo estimate of the entropy lower bound with `M` latents.
    pub fn entropy_bound(
        &self,
        sampler: &InputSampler,
        k: usize,
        m: usize,
        rng: &mut Rng,
    ) -> Result<EntropyBoundEstimate, PolicyError> {
        if m < 2 {
            return Err(PolicyError::TooFewSamples { min: 2, got: m });
        }
        let batch = self.sample_bound_batch(sampler, k, m, rng)?;
        let mut g = Graph::new();
        let nodes = build_entropy_bound(&mut g, &self.config, &batch)?;
        let values = g.evaluate(&self.params, &HashMap::new())?;
        Ok(nodes.estimate(&values, &self.prior()))
    }
}

/// `[n, d]` tensor whose rows all equal `z`.
pub fn repeat_row(z: &[f64], n: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * z.len());
    for _ in 0..n {
        data.extend_from_slice(z);
    }
    Tensor::new(vec![n, z.len()], data).expect("consistent shape")
}

pub fn rows_tensor(rows: &[Vec<f64>], width: usize) -> Result<Tensor, PolicyError> {
    let mut data = Vec::with_capacity(rows.len() * width);
    for r in rows {
        check_len("observation", width, r.len())?;
        data.extend_from_slice(r);
    }
    Ok(Tensor::new(vec![rows.len(), width], data)?)
}

/// Diagonal Gaussian log-density.
pub fn log_q(mu: &[f64], log_sigma: &[f64], z: &[f64]) -> f64 {
    let mut lp = -0.5 * mu.len() as f64 * (2.0 * PI).ln();
    for ((m, ls), zi) in mu.iter().zip(log_sigma).zip(z) {
        let u = (zi - m) / ls.exp();
        lp -= 0.5 * u * u + ls;
    }
    lp
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartialFunction {
    pub pairs: Vec<(Vec<f64>, usize)>,
}

/// Recognition output for one partial function.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    /// `∇_z̄ Σ_k CE(y_k, p(y | x_k, z̄))`.
    pub feature: Vec<f64>,
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl Encoding {
    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }

    pub fn log_q(&self, z: &[f64]) -> f64 {
        log_q(&self.mu, &self.log_sigma, z)
    }
}

/// `M` latents with `K` labelled inputs each; row `m * K + k` of `xs`
/// belongs to latent `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundBatch {
    pub z: Tensor,
    pub xs: Tensor,
    pub labels: Vec<usize>,
    pub k: usize,
}

impl BoundBatch {
    pub fn m(&self) -> usize {
        self.z.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyBoundEstimate {
    pub h_z: f64,
    pub cross_term: f64,
    pub h_f_given_z: f64,
    pub bound: f64,
    pub n_samples: usize,
    pub std_error: f64,
}

/// Graph nodes of an encoding.
#[derive(Clone, Copy, Debug)]
pub struct EncodingNodes {
    pub feature: NodeId,
    pub mu: NodeId,
    pub log_sigma: NodeId,
}

/// Graph nodes of the entropy bound.
#[derive(Clone, Copy, Debug)]
pub struct BoundNodes {
    pub bound: NodeId,
    pub cross_term: NodeId,
    pub h_f_given_z: NodeId,
    pub log_q: NodeId,
    /// Zero-valued score-function term. Its gradient accounts for the
    /// labels of `f̂` being sampled from the policy being differentiated.
    pub surrogate: NodeId,
    /// `bound + surrogate`: the node to differentiate during training.
    pub objective: NodeId,
}

impl BoundNodes {
    pub fn estimate(&self, values: &Values, prior: &LatentPrior) -> EntropyBoundEstimate {
        let lq = values.get(self.log_q).data();
        let m = lq.len();
        let mean = lq.iter().sum::<f64>() / m as f64;
        let var = lq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0).max(1.0);
        EntropyBoundEstimate {
            h_z: prior.entropy(),
            cross_term: values.scalar(self.cross_term),
            h_f_given_z: values.scalar(self.h_f_given_z),
            bound: values.scalar(self.bound),
            n_samples: m,
            std_error: (var / m as f64).sqrt(),
        }
    }
}

fn dense(g: &mut Graph, prefix: &str, x: NodeId, fan_in: usize, fan_out: usize) -> Result<NodeId, DiffError> {
    let w = g.param(&format!("{prefix}.w"), &[fan_in, fan_out])?;
    let b = g.param(&format!("{prefix}.b"), &[fan_out])?;
    g.linear(x, w, b)
}

/// Last hidden activation for `x` `[n, obs_dim]` and `z` `[n, d]`.
pub fn build_trunk(g: &mut Graph, cfg: &ModelConfig, x: NodeId, z: NodeId) -> Result<NodeId, DiffError> {
    let mut h = g.concat_cols(x, z)?;
    let mut fan_in = cfg.obs_dim + cfg.latent_dim;
    for (i, &width) in cfg.hidden.iter().enumerate() {
        let pre = dense(g, &format!("pi.h{i}"), h, fan_in, width)?;
        h = g.tanh(pre);
        fan_in = width;
    }
    Ok(h)
}

pub fn build_logits(g: &mut Graph, cfg: &ModelConfig, trunk: NodeId) -> Result<NodeId, DiffError> {
    dense(g, "pi.out", trunk, cfg.trunk_width(), cfg.action_count)
}

/// State values `[n]`.
pub fn build_value(g: &mut Graph, cfg: &ModelConfig, trunk: NodeId) -> Result<NodeId, DiffError> {
    let v = dense(g, "v.out", trunk, cfg.trunk_width(), 1)?;
    let n = g.shape(v)[0];
    g.reshape(v, &[n])
}

pub fn one_hot_rows(labels: &[usize], width: usize) -> Tensor {
    let mut data = vec![0.0; labels.len() * width];
    for (i, &y) in labels.iter().enumerate() {
        data[i * width + y] = 1.0;
    }
    Tensor::new(vec![labels.len(), width], data).expect("consistent shape")
}

/// Encoding of `m` partial functions of `k` pairs each, stacked in `x`.
///
/// The feature is built symbolically with [`Graph::gradients`], so
/// differentiating anything downstream of it reaches the prediction
/// parameters through a second-order path.
pub fn build_encoding(
    g: &mut Graph,
    cfg: &ModelConfig,
    x: NodeId,
    labels: &[usize],
    m: usize,
    k: usize,
) -> Result<EncodingNodes, DiffError> {
    let zbar = g.constant(Tensor::zeros(&[m, cfg.latent_dim]));
    let zrep = g.repeat_rows(zbar, k)?;
    let trunk = build_trunk(g, cfg, x, zrep)?;
    let logits = build_logits(g, cfg, trunk)?;
    let lp = g.log_softmax(logits)?;
    let onehot = g.constant(one_hot_rows(labels, cfg.action_count));
    let picked = g.mul(lp, onehot)?;
    let total = g.reduce_sum(picked);
    let ce = g.neg(total);
    let feature = g.gradients(ce, &[zbar])?[0];

    let mut h = feature;
    let mut fan_in = cfg.latent_dim;
    for (i, &width) in cfg.recog_hidden.iter().enumerate() {
        let pre = dense(g, &format!("rq.h{i}"), h, fan_in, width)?;
        h = g.tanh(pre);
        fan_in = width;
    }
    let mu = dense(g, "rq.mu", h, fan_in, cfg.latent_dim)?;
    let raw = dense(g, "rq.ls", h, fan_in, cfg.latent_dim)?;
    let log_sigma = g.clamp(raw, LOG_SIGMA_MIN, LOG_SIGMA_MAX);
    Ok(EncodingNodes { feature, mu, log_sigma })
}

/// Entropy bound over a sampled batch. Inputs and labels enter as constants.
pub fn build_entropy_bound(g: &mut Graph, cfg: &ModelConfig, batch: &BoundBatch) -> Result<BoundNodes, DiffError> {
    let (m, k) = (batch.m(), batch.k);
    let prior = LatentPrior::new(cfg.latent_dim);
    let x = g.constant(batch.xs.clone());
    let enc = build_encoding(g, cfg, x, &batch.labels, m, k)?;

    let z = g.constant(batch.z.clone());
    let log_q = g.gaussian_log_density(z, enc.mu, enc.log_sigma)?;
    let cross_term = g.reduce_mean(log_q);

    let zrep = g.repeat_rows(z, k)?;
    let trunk = build_trunk(g, cfg, x, zrep)?;
    let logits = build_logits(g, cfg, trunk)?;
    let p = g.softmax(logits)?;
    let lp = g.log_softmax(logits)?;
    let plp = g.mul(p, lp)?;
    let neg_sum = g.reduce_sum(plp);
    let h_f_given_z = g.scale(neg_sum, -1.0 / m as f64);

    let h_z = g.scalar(prior.entropy());
    let partial = g.add(h_z, cross_term)?;
    let bound = g.add(partial, h_f_given_z)?;

    // Leave-one-out baseline: b_m = mean of the other log q values, so the
    // centred weight is M/(M-1) * (log q_m - mean).
    let onehot = g.constant(one_hot_rows(&batch.labels, cfg.action_count));
    let picked = g.mul(lp, onehot)?;
    let per_pair = g.sum_cols(picked)?;
    let per_fn_rows = g.reshape(per_pair, &[m, k])?;
    let log_p_fn = g.sum_cols(per_fn_rows)?;
    let lq_fixed = g.detach(log_q);
    let lq_mean = g.reduce_mean(lq_fixed);
    let lq_mean_b = g.broadcast_scalar(lq_mean, &[m])?;
    let centred = g.sub(lq_fixed, lq_mean_b)?;
    let loo = if m > 1 { m as f64 / (m as f64 - 1.0) } else { 0.0 };
    let weight = g.scale(centred, loo / m as f64);
    let weighted = g.mul(weight, log_p_fn)?;
    let score = g.reduce_sum(weighted);
    let score_fixed = g.detach(score);
    let surrogate = g.sub(score, score_fixed)?;
    let objective = g.add(bound, surrogate)?;

    Ok(BoundNodes {
        bound,
        cross_term,
        h_f_given_z,
        log_q,
        surrogate,
        objective,
    })
}
