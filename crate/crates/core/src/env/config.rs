//! Serializable environment selection and a single type covering both
//! families, so configs and experiment plans can name any task.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::grid::{GridSpec, GridState};
use super::layouts::BUILTIN_SIZE;
use super::multiroom::{EpisodeMode, ModeTag, MultiRoomEnv, MultiRoomEpisode};
use super::{EnvError, Environment, Transition};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvConfig {
    Grid {
        /// Built-in id, or a label when `layout_file` is given.
        id: String,
        #[serde(default = "default_grid_size")]
        size: usize,
        #[serde(default)]
        max_steps: Option<usize>,
        #[serde(default)]
        layout_file: Option<PathBuf>,
    },
    Multiroom {
        /// `n<rooms>s<size>`, e.g. `n2s4`.
        id: String,
        #[serde(default = "default_mode")]
        mode: ModeTag,
        #[serde(default)]
        base_seed: u64,
    },
}

fn default_grid_size() -> usize {
    BUILTIN_SIZE
}

fn default_mode() -> ModeTag {
    ModeTag::Static
}

impl EnvConfig {
    pub fn grid(id: &str, size: usize, max_steps: Option<usize>) -> Self {
        Self::Grid {
            id: id.to_string(),
            size,
            max_steps,
            layout_file: None,
        }
    }

    pub fn multiroom(id: &str, mode: ModeTag, base_seed: u64) -> Self {
        Self::Multiroom {
            id: id.to_string(),
            mode,
            base_seed,
        }
    }

    /// Name used for directories and reports.
    pub fn id(&self) -> &str {
        match self {
            Self::Grid { id, .. } | Self::Multiroom { id, .. } => id,
        }
    }

    pub fn build(&self) -> Result<AnyEnv, EnvError> {
        match self {
            Self::Grid {
                id,
                size,
                max_steps,
                layout_file,
            } => {
                let spec = match layout_file {
                    Some(path) => {
                        let mut s = GridSpec::load(path)?;
                        s.name = id.clone();
                        s
                    }
                    None => GridSpec::builtin(id, *size)?,
                };
                let spec = match max_steps {
                    Some(m) => spec.with_max_steps(*m),
                    None => spec,
                };
                Ok(AnyEnv::Grid(spec))
            }
            Self::Multiroom { id, mode, base_seed } => {
                let (n, s) = MultiRoomEnv::parse_id(id).ok_or_else(|| EnvError::UnknownLayout(id.clone()))?;
                let mode = EpisodeMode {
                    tag: *mode,
                    base_seed: *base_seed,
                };
                Ok(AnyEnv::MultiRoom(Arc::new(MultiRoomEnv::new(n, s, mode)?)))
            }
        }
    }
}

/// Either environment family behind one [`Environment`] implementation.
#[derive(Clone, Debug)]
pub enum AnyEnv {
    Grid(GridSpec),
    MultiRoom(Arc<MultiRoomEnv>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum AnyState {
    Grid(GridState),
    MultiRoom(MultiRoomEpisode),
}

impl AnyEnv {
    pub fn as_grid(&self) -> Option<&GridSpec> {
        match self {
            Self::Grid(g) => Some(g),
            Self::MultiRoom(_) => None,
        }
    }
}

impl Environment for AnyEnv {
    type State = AnyState;

    fn obs_dim(&self) -> usize {
        match self {
            Self::Grid(g) => g.obs_dim(),
            Self::MultiRoom(m) => m.obs_dim(),
        }
    }

    fn action_count(&self) -> usize {
        match self {
            Self::Grid(g) => g.action_count(),
            Self::MultiRoom(m) => m.action_count(),
        }
    }

    fn max_steps(&self) -> usize {
        match self {
            Self::Grid(g) => Environment::max_steps(g),
            Self::MultiRoom(m) => m.max_steps(),
        }
    }

    fn reset(&self, episode_index: u64) -> AnyState {
        match self {
            Self::Grid(g) => AnyState::Grid(g.reset(episode_index)),
            Self::MultiRoom(m) => AnyState::MultiRoom(m.reset(episode_index)),
        }
    }

    fn step(&self, state: &AnyState, action: usize) -> Result<Transition<AnyState>, EnvError> {
        match (self, state) {
            (Self::Grid(g), AnyState::Grid(s)) => {
                let t = g.step(s, action)?;
                Ok(Transition {
                    state: AnyState::Grid(t.state),
                    reward: t.reward,
                    done: t.done,
                })
            }
            (Self::MultiRoom(m), AnyState::MultiRoom(s)) => {
                let t = m.step(s, action)?;
                Ok(Transition {
                    state: AnyState::MultiRoom(t.state),
                    reward: t.reward,
                    done: t.done,
                })
            }
            _ => Err(EnvError::InvalidLayout(
                "state belongs to a different environment family".into(),
            )),
        }
    }

    fn observe(&self, state: &AnyState) -> Vec<f64> {
        match (self, state) {
            (Self::Grid(g), AnyState::Grid(s)) => g.observe(s),
            (Self::MultiRoom(m), AnyState::MultiRoom(s)) => m.observe(s),
            _ => panic!("state belongs to a different environment family"),
        }
    }

    fn input_space(&self) -> Option<Vec<Vec<f64>>> {
        match self {
            Self::Grid(g) => g.input_space(),
            Self::MultiRoom(m) => m.input_space(),
        }
    }
}
