//! Rollout diagnostics for trained policy distributions: per-latent
//! state-visitation heatmaps, greedy-trajectory diversity, and image,
//! CSV and SVG exports.

mod export;
#[cfg(test)]
mod tests;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::grid::Cell;
use crate::env::{EnvError, GridAction, GridSpec, GridState};
use crate::policy::{sample_categorical, PolicyError, PolicyModel};
use crate::rng::Rng;

pub use export::{
    curves_svg, export_curves_svg, export_heatmap, heatmap_csv, heatmap_ppm, parse_heatmap_csv, transfer_panels, Panel,
};

#[derive(Debug, Error)]
pub enum DiagError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    Sampled,
    Greedy,
}

/// Visit counts over a square grid, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub size: usize,
    pub counts: Vec<u64>,
    pub z: Vec<f64>,
    pub rollouts: usize,
    pub mode: PolicyMode,
}

impl Heatmap {
    pub fn empty(size: usize, z: Vec<f64>, mode: PolicyMode) -> Self {
        Self {
            size,
            counts: vec![0; size * size],
            z,
            rollouts: 0,
            mode,
        }
    }

    pub fn get(&self, (r, c): Cell) -> u64 {
        self.counts[r * self.size + c]
    }

    fn visit(&mut self, (r, c): Cell) {
        self.counts[r * self.size + c] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Samples with `rng`, or takes the argmax when `rng` is `None`.
fn choose(
    model: &PolicyModel,
    spec: &GridSpec,
    pos: Cell,
    z: &[f64],
    rng: Option<&mut Rng>,
) -> Result<GridAction, DiagError> {
    let obs = spec.encode_obs(&GridState { pos, steps_taken: 0 });
    let dist = model.policy_forward(&obs, z)?;
    let a = match rng {
        None => dist.greedy(),
        Some(rng) => sample_categorical(&dist.probs, rng),
    };
    Ok(GridAction::from_index(a)?)
}

/// Cells of one episode under `z`: the start cell, then the cell after
/// every step, until the goal or the step cap.
pub fn rollout_cells(
    spec: &GridSpec,
    model: &PolicyModel,
    z: &[f64],
    mode: PolicyMode,
    rng: &mut Rng,
) -> Result<Vec<Cell>, DiagError> {
    let mut state = spec.reset_state();
    let mut cells = vec![state.pos];
    while !spec.is_done(&state) {
        let rng = (mode == PolicyMode::Sampled).then_some(&mut *rng);
        let action = choose(model, spec, state.pos, z, rng)?;
        state = spec.step_action(&state, action)?.state;
        cells.push(state.pos);
    }
    Ok(cells)
}

/// One heatmap per latent drawn from the prior. Every rollout adds one
/// count for its start cell and one per step taken, so a rollout of `T`
/// steps contributes `T + 1` counts.
pub fn visitation_heatmaps(
    spec: &GridSpec,
    model: &PolicyModel,
    n_z: usize,
    rollouts_per_z: usize,
    mode: PolicyMode,
    rng: &mut Rng,
) -> Result<Vec<Heatmap>, DiagError> {
    check_dims(spec, model)?;
    let prior = model.prior();
    (0..n_z)
        .map(|_| {
            let z = prior.sample(rng);
            let mut h = Heatmap::empty(spec.size, z.clone(), mode);
            for _ in 0..rollouts_per_z {
                for cell in rollout_cells(spec, model, &z, mode, rng)? {
                    h.visit(cell);
                }
                h.rollouts += 1;
            }
            Ok(h)
        })
        .collect()
}

fn check_dims(spec: &GridSpec, model: &PolicyModel) -> Result<(), DiagError> {
    let want = spec.size * spec.size;
    if model.config.obs_dim != want || model.config.action_count != 4 {
        return Err(DiagError::Invalid(format!(
            "model expects {} inputs and {} actions, grid {} has {want} and 4",
            model.config.obs_dim, model.config.action_count, spec.name
        )));
    }
    Ok(())
}

/// Argmax trajectory for `z`: stops at the goal, before revisiting a cell,
/// or after `max_steps` steps.
pub fn greedy_trajectory(spec: &GridSpec, model: &PolicyModel, z: &[f64]) -> Result<Vec<Cell>, DiagError> {
    let mut pos = spec.start;
    let mut seen = HashSet::from([pos]);
    let mut cells = vec![pos];
    for _ in 0..spec.max_steps {
        if pos == spec.goal {
            break;
        }
        let action = choose(model, spec, pos, z, None)?;
        let next = spec.next_cell(pos, action);
        if !seen.insert(next) {
            break;
        }
        cells.push(next);
        pos = next;
    }
    Ok(cells)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub n_z: usize,
    pub distinct_greedy_trajectories: usize,
    /// Mean over unordered pairs of edit distance divided by the longer
    /// length; 0 when `n_z < 2`.
    pub mean_pairwise_distance: f64,
    pub goal_reach_fraction: f64,
}

pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

pub fn normalized_edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 0.0;
    }
    edit_distance(a, b) as f64 / longest as f64
}

/// Diversity of greedy trajectories over `n_z` latents from the prior.
pub fn diversity_report(
    spec: &GridSpec,
    model: &PolicyModel,
    n_z: usize,
    rng: &mut Rng,
) -> Result<DiversityReport, DiagError> {
    check_dims(spec, model)?;
    let prior = model.prior();
    let trajs = (0..n_z)
        .map(|_| greedy_trajectory(spec, model, &prior.sample(rng)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(report_from_trajectories(spec.goal, &trajs))
}

pub fn report_from_trajectories(goal: Cell, trajs: &[Vec<Cell>]) -> DiversityReport {
    let distinct: HashSet<&Vec<Cell>> = trajs.iter().collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..trajs.len() {
        for j in i + 1..trajs.len() {
            sum += normalized_edit_distance(&trajs[i], &trajs[j]);
            pairs += 1;
        }
    }
    let reached = trajs.iter().filter(|t| t.last() == Some(&goal)).count();
    DiversityReport {
        n_z: trajs.len(),
        distinct_greedy_trajectories: distinct.len(),
        mean_pairwise_distance: if pairs == 0 { 0.0 } else { sum / pairs as f64 },
        goal_reach_fraction: if trajs.is_empty() {
            0.0
        } else {
            reached as f64 / trajs.len() as f64
        },
    }
}
