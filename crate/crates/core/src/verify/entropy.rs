use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffcore::{backward, AdamConfig, Graph, Tensor};
use crate::policy::{build_entropy_bound, repeat_row, InputSampler, ModelConfig, PolicyError, PolicyModel};
use crate::rng::{stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyOracleConfig {
    pub random_params: usize,
    pub train_steps: usize,
    pub train_m: usize,
    pub train_lr: f64,
    /// Latents in each bound estimate.
    pub estimate_m: usize,
    /// Trapezoid nodes per latent axis.
    pub grid_points: usize,
    /// Half-width of the integration box, in prior standard deviations.
    pub z_range: f64,
}

impl Default for EntropyOracleConfig {
    fn default() -> Self {
        Self {
            random_params: 20,
            train_steps: 500,
            train_m: 64,
            train_lr: 1e-2,
            estimate_m: 4000,
            grid_points: 241,
            z_range: 7.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub name: String,
    pub bound: f64,
    pub exact_h: f64,
    pub std_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyOracleReport {
    pub cases: Vec<OracleCase>,
}

impl EntropyOracleReport {
    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.cases.iter().all(|c| c.passed)
    }
}

/// Three one-hot inputs, two actions, a 2-D latent.
fn oracle_config() -> ModelConfig {
    ModelConfig {
        obs_dim: 3,
        action_count: 2,
        latent_dim: 2,
        hidden: vec![4],
        recog_hidden: vec![4],
        value_head: false,
        recognition: true,
    }
}

fn one_hot_inputs(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut x = vec![0.0; n];
            x[i] = 1.0;
            x
        })
        .collect()
}

/// Exact entropy of the labels the policy distribution assigns to
/// `inputs`, by enumerating every labeling and integrating the latent out
/// on a tensor-product trapezoid grid over `[-range, range]^d`.
pub fn exact_partial_function_entropy(
    model: &PolicyModel,
    inputs: &[Vec<f64>],
    grid_points: usize,
    range: f64,
) -> Result<f64, PolicyError> {
    let d = model.config.latent_dim;
    let a = model.config.action_count;
    let n = grid_points.max(2);
    let step = 2.0 * range / (n - 1) as f64;
    let axis: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let z = -range + step * i as f64;
            let w = if i == 0 || i == n - 1 { 0.5 * step } else { step };
            (z, w * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt())
        })
        .collect();
    let total = n.pow(d as u32);
    let mut zs = Vec::with_capacity(total * d);
    let mut weights = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rest = idx;
        let mut w = 1.0;
        for _ in 0..d {
            let (z, wi) = axis[rest % n];
            zs.push(z);
            w *= wi;
            rest /= n;
        }
        weights.push(w);
    }
    let mass: f64 = weights.iter().sum();
    let z = Tensor::new(vec![total, d], zs)?;

    let probs: Vec<Tensor> = inputs
        .iter()
        .map(|x| model.logits_batch(&repeat_row(x, total), &z).softmax_rows())
        .collect();
    let k = inputs.len();
    let labelings = a.pow(k as u32);
    let mut h = 0.0;
    for f in 0..labelings {
        let mut p = 0.0;
        for (row, w) in weights.iter().enumerate() {
            let mut rest = f;
            let mut lik = *w;
            for pk in &probs {
                lik *= pk.row(row)[rest % a];
                rest /= a;
            }
            p += lik;
        }
        let p = p / mass;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    Ok(h)
}

fn randomize(model: &mut PolicyModel, scale: f64, rng: &mut Rng) {
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for n in names {
        for v in model.params.get_mut(&n).expect("listed").data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

/// Gradient ascent on the bound, policy and recognition network jointly.
fn train_pair(
    model: &mut PolicyModel,
    sampler: &InputSampler,
    k: usize,
    cfg: &EntropyOracleConfig,
    rng: &mut Rng,
) -> Result<(), PolicyError> {
    let adam = AdamConfig::with_lr(cfg.train_lr);
    for _ in 0..cfg.train_steps {
        let batch = model.sample_bound_batch(sampler, k, cfg.train_m, rng)?;
        let mut g = Graph::new();
        let nodes = build_entropy_bound(&mut g, &model.config, &batch)?;
        g.mark_output("objective", nodes.objective);
        let grads = backward(&g, &model.params, &HashMap::new(), "objective", &[])?;
        let descent: BTreeMap<String, Tensor> = model
            .params
            .iter()
            .map(|(name, t)| {
                let step = grads
                    .params
                    .get(name)
                    .map_or_else(|| Tensor::zeros(t.shape()), |g| g.map(|v| -v));
                (name.to_string(), step)
            })
            .collect();
        model.params.adam_step(&descent, &adam)?;
    }
    Ok(())
}

fn evaluate_case(
    name: String,
    model: &PolicyModel,
    inputs: &[Vec<f64>],
    cfg: &EntropyOracleConfig,
    rng: &mut Rng,
) -> Result<OracleCase, PolicyError> {
    let sampler = InputSampler::Enumerate(inputs.to_vec());
    let est = model.entropy_bound(&sampler, inputs.len(), cfg.estimate_m, rng)?;
    let exact_h = exact_partial_function_entropy(model, inputs, cfg.grid_points, cfg.z_range)?;
    Ok(OracleCase {
        name,
        bound: est.bound,
        exact_h,
        std_error: est.std_error,
        passed: est.bound <= exact_h + 3.0 * est.std_error,
    })
}

/// The bound against the exact partial-function entropy on a space small
/// enough to enumerate: random parameterizations, then a policy and
/// recognition network trained to maximize the bound.
pub fn entropy_oracle(cfg: &EntropyOracleConfig, seed: u64) -> EntropyOracleReport {
    let inputs = one_hot_inputs(3);
    let mut rng = stream(seed, "entropy-oracle");
    let mut cases = Vec::new();
    let mut push = |r: Result<OracleCase, PolicyError>, name: &str| {
        cases.push(r.unwrap_or_else(|e| OracleCase {
            name: format!("{name} ({e})"),
            bound: f64::NAN,
            exact_h: f64::NAN,
            std_error: f64::NAN,
            passed: false,
        }))
    };
    for i in 0..cfg.random_params {
        let mut model = PolicyModel::new(oracle_config(), &mut rng);
        randomize(&mut model, 1.5, &mut rng);
        let name = format!("random_{i}");
        push(evaluate_case(name.clone(), &model, &inputs, cfg, &mut rng), &name);
    }
    let mut model = PolicyModel::new(oracle_config(), &mut rng);
    let sampler = InputSampler::Enumerate(inputs.clone());
    let trained = train_pair(&mut model, &sampler, inputs.len(), cfg, &mut rng)
        .and_then(|()| evaluate_case("trained".into(), &model, &inputs, cfg, &mut rng));
    push(trained, "trained");
    EntropyOracleReport { cases }
}
