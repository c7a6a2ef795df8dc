use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffcore::{finite_diff_check, FdReport, Graph, ParamSet, Tensor};
use crate::env::GridSpec;
use crate::policy::{build_entropy_bound, InputSampler, ModelConfig, PolicyModel};
use crate::rng::{stream, Rng};
use crate::trainers::{a2c_loss, collect_rollouts, function_prior, reinforce_loss, Baseline, StepBatch};

const STEP: f64 = 1e-5;

type CaseError = Box<dyn std::error::Error>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradGroup {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub groups: Vec<GradGroup>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn group(&self, name: &str) -> Option<&GradGroup> {
        self.groups.iter().find(|g| g.name == name)
    }
}

fn uniform(shape: &[usize], scale: f64, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .expect("shape matches data")
}

fn randomize(model: &mut PolicyModel, scale: f64, rng: &mut Rng) {
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for n in names {
        for v in model.params.get_mut(&n).expect("listed").data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

/// Worst case over several graph instances.
fn merge(reports: Vec<FdReport>) -> FdReport {
    reports.into_iter().fold(
        FdReport {
            max_rel_error: 0.0,
            checked: 0,
            skipped: 0,
        },
        |a, b| FdReport {
            max_rel_error: a.max_rel_error.max(b.max_rel_error),
            checked: a.checked + b.checked,
            skipped: a.skipped + b.skipped,
        },
    )
}

fn group(name: &str, tolerance: f64, result: Result<FdReport, CaseError>) -> GradGroup {
    match result {
        Ok(r) => GradGroup {
            name: name.to_string(),
            max_rel_error: r.max_rel_error,
            tolerance,
            checked: r.checked,
            skipped: r.skipped,
            passed: r.checked > 0 && r.max_rel_error < tolerance,
            error: None,
        },
        Err(e) => GradGroup {
            name: name.to_string(),
            max_rel_error: f64::NAN,
            tolerance,
            checked: 0,
            skipped: 0,
            passed: false,
            error: Some(e.to_string()),
        },
    }
}

fn check(g: &Graph, params: &ParamSet, out: &str) -> Result<FdReport, CaseError> {
    Ok(finite_diff_check(g, params, &HashMap::new(), out, STEP)?)
}

/// Two-layer tanh network with softmax cross-entropy over 50 points.
fn mlp_case(rng: &mut Rng) -> Result<FdReport, CaseError> {
    let (n, i, h, o) = (50, 4, 6, 3);
    let mut params = ParamSet::new();
    params.insert("w1", uniform(&[i, h], 1.0, rng));
    params.insert("b1", uniform(&[h], 0.5, rng));
    params.insert("w2", uniform(&[h, o], 1.0, rng));
    params.insert("b2", uniform(&[o], 0.5, rng));
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..o)).collect();
    let mut onehot = vec![0.0; n * o];
    for (r, &y) in labels.iter().enumerate() {
        onehot[r * o + y] = 1.0;
    }
    let mut g = Graph::new();
    let x = g.constant(uniform(&[n, i], 2.0, rng));
    let w1 = g.param("w1", &[i, h])?;
    let b1 = g.param("b1", &[h])?;
    let w2 = g.param("w2", &[h, o])?;
    let b2 = g.param("b2", &[o])?;
    let pre = g.linear(x, w1, b1)?;
    let hid = g.tanh(pre);
    let logits = g.linear(hid, w2, b2)?;
    let lp = g.log_softmax(logits)?;
    let y = g.constant(Tensor::new(vec![n, o], onehot)?);
    let picked = g.mul(lp, y)?;
    let total = g.reduce_sum(picked);
    let loss = g.scale(total, -1.0 / n as f64);
    g.mark_output("loss", loss);
    check(&g, &params, "loss")
}

/// Every remaining primitive in one scalar.
fn primitives_case(rng: &mut Rng) -> Result<FdReport, CaseError> {
    let mut params = ParamSet::new();
    params.insert("a", uniform(&[3, 4], 1.0, rng));
    params.insert("b", uniform(&[3, 4], 1.0, rng));
    params.insert("mu", uniform(&[3, 2], 1.0, rng));
    params.insert("ls", uniform(&[3, 2], 0.5, rng));
    let mut g = Graph::new();
    let a = g.param("a", &[3, 4])?;
    let b = g.param("b", &[3, 4])?;
    let mu = g.param("mu", &[3, 2])?;
    let ls = g.param("ls", &[3, 2])?;
    let e = g.exp(a);
    let sq = g.square(b);
    let r = g.relu(a);
    let c = g.clamp(b, -0.5, 0.5);
    let sm = g.softmax(a)?;
    let prod = g.mul(e, sm)?;
    let s1 = g.add(prod, sq)?;
    let s2 = g.sub(s1, r)?;
    let s3 = g.add(s2, c)?;
    let bt = g.transpose(b)?;
    let mm = g.matmul(a, bt)?;
    let rows = g.sum_rows(mm)?;
    let cols = g.sum_cols(s3)?;
    let z = g.slice_cols(a, 0, 2)?;
    let logd = g.gaussian_log_density(z, mu, ls)?;
    let cat = g.concat_cols(z, mu)?;
    let rep = g.repeat_rows(cat, 2)?;
    let blocks = g.sum_row_blocks(rep, 2)?;
    let t = g.tanh(blocks);
    let parts = [
        g.reduce_mean(rows),
        g.reduce_sum(cols),
        g.reduce_sum(logd),
        g.reduce_sum(t),
    ];
    let mut acc = g.scalar(0.0);
    for p in parts {
        acc = g.add(acc, p)?;
    }
    let out = g.add_scalar(acc, 0.25);
    g.mark_output("out", out);
    check(&g, &params, "out")
}

fn toy_model(value_head: bool, recognition: bool, rng: &mut Rng) -> PolicyModel {
    let cfg = ModelConfig {
        obs_dim: 36,
        action_count: 4,
        latent_dim: 2,
        hidden: vec![5],
        recog_hidden: vec![4],
        value_head,
        recognition,
    };
    let mut m = PolicyModel::new(cfg, rng);
    randomize(&mut m, 0.8, rng);
    m
}

fn toy_batch(model: &PolicyModel, rng: &mut Rng) -> Result<StepBatch, CaseError> {
    let env = GridSpec::builtin("grid1", 6)
        .expect("canonical layout")
        .with_max_steps(5);
    let mut lr = stream(rng.random(), "latent");
    let mut ar = stream(rng.random(), "action");
    let trajs = collect_rollouts(&env, model, 3, 0, &mut lr, &mut ar)?;
    Ok(StepBatch::new(&trajs, &model.config, 0.9)?)
}

fn pg_case(a2c: bool, rng: &mut Rng) -> Result<FdReport, CaseError> {
    let model = toy_model(a2c, false, rng);
    let batch = toy_batch(&model, rng)?;
    let mut g = Graph::new();
    let nodes = if a2c {
        a2c_loss(&mut g, &model, &batch, 0.5)
    } else {
        reinforce_loss(&mut g, &model.config, &batch, Baseline::BatchMean)
    }?;
    g.mark_output("loss", nodes.total);
    check(&g, &model.params, "loss")
}

fn prior_case(rng: &mut Rng) -> Result<FdReport, CaseError> {
    let model = toy_model(true, true, rng);
    let mut g = Graph::new();
    let p = function_prior(&mut g, &model.params, 0.3)?;
    g.mark_output("prior", p);
    check(&g, &model.params, "prior")
}

/// The bound differentiated through the encoding gradient (a second-order
/// path) on a toy network with 4 hidden units.
fn bound_case(rng: &mut Rng) -> Result<FdReport, CaseError> {
    let cfg = ModelConfig {
        obs_dim: 3,
        action_count: 3,
        latent_dim: 2,
        hidden: vec![4],
        recog_hidden: vec![4],
        value_head: false,
        recognition: true,
    };
    let mut model = PolicyModel::new(cfg, rng);
    randomize(&mut model, 1.0, rng);
    let space: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let batch = model.sample_bound_batch(&InputSampler::Uniform(space), 3, 4, rng)?;
    let mut g = Graph::new();
    let nodes = build_entropy_bound(&mut g, &model.config, &batch)?;
    g.mark_output("bound", nodes.bound);
    check(&g, &model.params, "bound")
}

fn repeat(n: usize, rng: &mut Rng, f: fn(&mut Rng) -> Result<FdReport, CaseError>) -> Result<FdReport, CaseError> {
    (0..n).map(|_| f(rng)).collect::<Result<Vec<_>, _>>().map(merge)
}

/// Every gradient group against central differences (`h = 1e-5`).
/// First-order paths must agree to `1e-6` relative error, the bound's
/// second-order path to `1e-4`.
pub fn gradcheck(seed: u64) -> GradcheckReport {
    let mut rng = stream(seed, "gradcheck");
    let groups = vec![
        group("mlp_softmax_ce", 1e-6, repeat(3, &mut rng, mlp_case)),
        group("primitives", 1e-6, repeat(5, &mut rng, primitives_case)),
        group("reinforce_loss", 1e-6, repeat(3, &mut rng, |r| pg_case(false, r))),
        group("a2c_loss", 1e-6, repeat(3, &mut rng, |r| pg_case(true, r))),
        group("function_prior", 1e-6, repeat(2, &mut rng, prior_case)),
        group("entropy_bound", 1e-4, repeat(5, &mut rng, bound_case)),
    ];
    GradcheckReport { groups }
}
