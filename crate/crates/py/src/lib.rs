//! Python bindings: gridworld stepping, checkpointed policies, training
//! from a config document and the verification oracles.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use polidist::checkpoint::Checkpoint;
use polidist::config::RunConfig;
use polidist::env::layouts::{canonical, BUILTIN_IDS};
use polidist::env::{GridAction, GridSpec, GridState};
use polidist::policy::PolicyModel;
use polidist::rng::stream;
use polidist::trainers::Trainer;
use polidist::transfer::write_run_artifacts;
use polidist::verify::{run_suite, Suite};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Fully observable gridworld episode.
#[pyclass(module = "polidist_py")]
struct GridEnv {
    spec: GridSpec,
    state: GridState,
}

#[pymethods]
impl GridEnv {
    #[new]
    #[pyo3(signature = (id, size = 20, max_steps = None))]
    fn new(id: &str, size: usize, max_steps: Option<usize>) -> PyResult<Self> {
        let mut spec = canonical(id, size).map_err(value_err)?;
        if let Some(m) = max_steps {
            spec = spec.with_max_steps(m);
        }
        let state = spec.reset_state();
        Ok(Self { spec, state })
    }

    /// Restarts the episode and returns the start cell.
    fn reset(&mut self) -> (usize, usize) {
        self.state = self.spec.reset_state();
        self.state.pos
    }

    /// Applies action 0-3 (up, down, left, right); returns
    /// `(cell, reward, done)`.
    fn step(&mut self, action: usize) -> PyResult<((usize, usize), f64, bool)> {
        let a = GridAction::from_index(action).map_err(value_err)?;
        let t = self.spec.step_action(&self.state, a).map_err(runtime_err)?;
        self.state = t.state;
        Ok((self.state.pos, t.reward, t.done))
    }

    /// One-hot encoding of the current cell.
    fn observation(&self) -> Vec<f64> {
        self.spec.encode_obs(&self.state)
    }

    #[getter]
    fn size(&self) -> usize {
        self.spec.size
    }

    #[getter]
    fn max_steps(&self) -> usize {
        self.spec.max_steps
    }

    #[getter]
    fn goal(&self) -> (usize, usize) {
        self.spec.goal
    }

    fn layout_text(&self) -> String {
        self.spec.to_text()
    }
}

/// A trained policy distribution loaded from a checkpoint file.
#[pyclass(module = "polidist_py")]
struct Policy {
    model: PolicyModel,
    env: String,
    algorithm: String,
}

#[pymethods]
impl Policy {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(value_err)?;
        Ok(Self {
            model: ck.model,
            env: ck.metadata.env,
            algorithm: ck.metadata.algorithm,
        })
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.model.config.latent_dim
    }

    #[getter]
    fn env(&self) -> String {
        self.env.clone()
    }

    #[getter]
    fn algorithm(&self) -> String {
        self.algorithm.clone()
    }

    /// Latent drawn from the standard normal prior.
    fn sample_latent(&self, seed: u64) -> Vec<f64> {
        self.model.prior().sample(&mut stream(seed, "latent"))
    }

    fn action_probs(&self, observation: Vec<f64>, z: Vec<f64>) -> PyResult<Vec<f64>> {
        let dist = self.model.policy_forward(&observation, &z).map_err(value_err)?;
        Ok(dist.probs)
    }
}

/// Trains from a JSON config document and writes its artifacts; returns
/// the per-update mean returns.
#[pyfunction]
#[pyo3(signature = (config_json, overrides = Vec::new()))]
fn train(py: Python<'_>, config_json: &str, overrides: Vec<String>) -> PyResult<Vec<f64>> {
    let cfg = RunConfig::from_json(config_json, &overrides).map_err(value_err)?;
    let seed = cfg.resolve_seed().map_err(value_err)?;
    py.detach(|| {
        let env = cfg.build_env().map_err(value_err)?;
        let (obs_dim, actions) = cfg.env_dims().map_err(value_err)?;
        let base = cfg.model.for_env(obs_dim, actions);
        let mut trainer = Trainer::new(&env, cfg.train.clone(), &base, seed).map_err(runtime_err)?;
        let records = trainer.run(|_, _| Ok(())).map_err(runtime_err)?;
        let curve = records.iter().map(|r| r.mean_cumulative_reward).collect();
        write_run_artifacts(&cfg.output_dir, cfg.env.id(), &cfg.train, seed, trainer.model, &records)
            .map_err(runtime_err)?;
        Ok(curve)
    })
}

/// Runs an oracle suite; returns `(passed, report_json)`.
#[pyfunction]
#[pyo3(signature = (suite, seed = 0))]
fn verify(py: Python<'_>, suite: &str, seed: u64) -> PyResult<(bool, String)> {
    let suite = Suite::parse(suite).ok_or_else(|| value_err(format!("unknown suite `{suite}`")))?;
    let outcome = py.detach(|| run_suite(suite, seed));
    Ok((outcome.passed, outcome.report.to_string()))
}

#[pyfunction]
fn builtin_layouts() -> Vec<&'static str> {
    BUILTIN_IDS.to_vec()
}

#[pymodule]
fn polidist_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<GridEnv>()?;
    m.add_class::<Policy>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_layouts, m)?)?;
    Ok(())
}
