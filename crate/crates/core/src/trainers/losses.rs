use crate::diffcore::{DiffError, Graph, NodeId, ParamSet, Tensor};
use crate::policy::{build_logits, build_trunk, build_value, one_hot_rows, ModelConfig, PolicyError, PolicyModel};

use super::{TrainError, Trajectory};

/// `G_t = Σ_{k≥t} γ^{k-t} r_k`.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Every step of a batch of trajectories, flattened in episode order.
#[derive(Clone, Debug, PartialEq)]
pub struct StepBatch {
    pub obs: Tensor,
    pub z: Tensor,
    pub actions: Vec<usize>,
    pub returns: Vec<f64>,
    pub n_trajectories: usize,
}

impl StepBatch {
    pub fn new(trajs: &[Trajectory], cfg: &ModelConfig, gamma: f64) -> Result<Self, TrainError> {
        let total: usize = trajs.iter().map(|t| t.steps.len()).sum();
        if trajs.is_empty() || total == 0 {
            return Err(TrainError::Config("empty trajectory batch".into()));
        }
        let mut obs = Vec::with_capacity(total * cfg.obs_dim);
        let mut z = Vec::with_capacity(total * cfg.latent_dim);
        let mut actions = Vec::with_capacity(total);
        let mut returns = Vec::with_capacity(total);
        for t in trajs {
            returns.extend(returns_to_go(&t.rewards(), gamma));
            for s in &t.steps {
                obs.extend_from_slice(&s.obs);
                z.extend_from_slice(&t.z);
                actions.push(s.action);
            }
        }
        Ok(Self {
            obs: Tensor::new(vec![total, cfg.obs_dim], obs).map_err(PolicyError::from)?,
            z: Tensor::new(vec![total, cfg.latent_dim], z).map_err(PolicyError::from)?,
            actions,
            returns,
            n_trajectories: trajs.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Baseline {
    /// Mean return-to-go over every step in the batch.
    BatchMean,
    Fixed(f64),
}

/// Scalar nodes of a policy-gradient loss. `total = pg_loss + value_loss`.
#[derive(Clone, Copy, Debug)]
pub struct PgNodes {
    pub total: NodeId,
    pub pg_loss: NodeId,
    pub value_loss: NodeId,
}

/// Log-probability of each taken action, `[T]`, plus the trunk node.
fn taken_log_probs(g: &mut Graph, cfg: &ModelConfig, batch: &StepBatch) -> Result<(NodeId, NodeId), DiffError> {
    let x = g.constant(batch.obs.clone());
    let z = g.constant(batch.z.clone());
    let trunk = build_trunk(g, cfg, x, z)?;
    let logits = build_logits(g, cfg, trunk)?;
    let lp = g.log_softmax(logits)?;
    let onehot = g.constant(one_hot_rows(&batch.actions, cfg.action_count));
    let picked = g.mul(lp, onehot)?;
    Ok((g.sum_cols(picked)?, trunk))
}

/// `-(1/N) Σ_t log π(a_t | s_t, z) (G_t - b)` with `N` trajectories.
pub fn reinforce_loss(
    g: &mut Graph,
    cfg: &ModelConfig,
    batch: &StepBatch,
    baseline: Baseline,
) -> Result<PgNodes, TrainError> {
    let b = match baseline {
        Baseline::BatchMean => batch.returns.iter().sum::<f64>() / batch.len() as f64,
        Baseline::Fixed(b) => b,
    };
    let adv: Vec<f64> = batch.returns.iter().map(|r| r - b).collect();
    let (lp, _) = taken_log_probs(g, cfg, batch)?;
    let adv = g.constant(Tensor::vector(adv));
    let weighted = g.mul(lp, adv)?;
    let sum = g.reduce_sum(weighted);
    let pg_loss = g.scale(sum, -1.0 / batch.n_trajectories as f64);
    let value_loss = g.scalar(0.0);
    Ok(PgNodes {
        total: pg_loss,
        pg_loss,
        value_loss,
    })
}

/// Policy term with `A_t = G_t - V(s_t)` plus
/// `value_coeff * mean_t (G_t - V(s_t))^2`.
///
/// The advantages are evaluated at the current parameters and enter the
/// graph as constants, so the critic receives no gradient from the policy
/// term and the graph's exact derivative is the actor-critic update.
pub fn a2c_loss(
    g: &mut Graph,
    model: &PolicyModel,
    batch: &StepBatch,
    value_coeff: f64,
) -> Result<PgNodes, TrainError> {
    let cfg = &model.config;
    if !cfg.value_head {
        return Err(TrainError::Model("a value head"));
    }
    let (_, values) = model.heads_batch(&batch.obs, &batch.z);
    let values = values.expect("value head present");
    let adv: Vec<f64> = batch.returns.iter().zip(&values).map(|(r, v)| r - v).collect();
    let (lp, trunk) = taken_log_probs(g, cfg, batch)?;
    let adv = g.constant(Tensor::vector(adv));
    let weighted = g.mul(lp, adv)?;
    let sum = g.reduce_sum(weighted);
    let pg_loss = g.scale(sum, -1.0 / batch.n_trajectories as f64);
    let v = build_value(g, cfg, trunk)?;
    let ret = g.constant(Tensor::vector(batch.returns.clone()));
    let err = g.sub(ret, v)?;
    let sq = g.square(err);
    let mse = g.reduce_mean(sq);
    let value_loss = g.scale(mse, value_coeff);
    let total = g.add(pg_loss, value_loss)?;
    Ok(PgNodes {
        total,
        pg_loss,
        value_loss,
    })
}

/// `-β Σ ||θ||²` over the prediction-network parameters (`pi.*`).
pub fn function_prior(g: &mut Graph, params: &ParamSet, beta: f64) -> Result<NodeId, DiffError> {
    let mut acc = g.scalar(0.0);
    if beta == 0.0 {
        return Ok(acc);
    }
    for (name, t) in params.iter().filter(|(n, _)| n.starts_with("pi.")) {
        let p = g.param(name, t.shape())?;
        let sq = g.square(p);
        let s = g.reduce_sum(sq);
        acc = g.add(acc, s)?;
    }
    Ok(g.scale(acc, -beta))
}
