//! Episodic environments: the fully observable gridworld family and the
//! partially observable multi-room generator.

pub mod config;
pub mod grid;
pub mod layouts;
pub mod multiroom;

use thiserror::Error;

pub use config::{AnyEnv, AnyState, EnvConfig};
pub use grid::{GridAction, GridSpec, GridState};
pub use multiroom::{EpisodeMode, Heading, MultiRoomAction, MultiRoomEnv, MultiRoomSpec, MultiRoomState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode")]
    EpisodeDone,
    #[error("invalid action index {0}")]
    InvalidAction(usize),
    #[error("layout parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("goal is unreachable from start")]
    Unreachable,
    #[error("unknown layout id `{0}`")]
    UnknownLayout(String),
    #[error("multi-room generation failed after {0} derived seeds")]
    GenerationFailed(usize),
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
}

/// Outcome of one environment transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<S> {
    pub state: S,
    pub reward: f64,
    pub done: bool,
}

/// The interface trainers and diagnostics drive.
pub trait Environment: Send + Sync {
    type State: Clone + Send + Sync;

    fn obs_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn max_steps(&self) -> usize;
    /// Fresh state for the given episode. Environments whose layout never
    /// changes ignore the index.
    fn reset(&self, episode_index: u64) -> Self::State;
    fn step(&self, state: &Self::State, action: usize) -> Result<Transition<Self::State>, EnvError>;
    fn observe(&self, state: &Self::State) -> Vec<f64>;
    /// Every distinct observation, when the input space is small enough to
    /// enumerate. `None` means callers must sample from visited observations.
    fn input_space(&self) -> Option<Vec<Vec<f64>>>;
}
