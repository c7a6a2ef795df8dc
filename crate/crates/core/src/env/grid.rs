use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{layouts, EnvError, Environment, Transition};

pub type Cell = (usize, usize);

pub const DEFAULT_STEP_PENALTY: f64 = -0.01;
pub const DEFAULT_GOAL_REWARD: f64 = 1.0;
pub const DEFAULT_MAX_STEPS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GridAction {
    Up,
    Down,
    Left,
    Right,
}

impl GridAction {
    pub const ALL: [GridAction; 4] = [Self::Up, Self::Down, Self::Left, Self::Right];

    pub fn from_index(i: usize) -> Result<Self, EnvError> {
        Self::ALL.get(i).copied().ok_or(EnvError::InvalidAction(i))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Self::Up => (-1, 0),
            Self::Down => (1, 0),
            Self::Left => (0, -1),
            Self::Right => (0, 1),
        }
    }
}

/// Immutable square gridworld layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub name: String,
    pub size: usize,
    pub walls: BTreeSet<Cell>,
    pub start: Cell,
    pub goal: Cell,
    pub step_penalty: f64,
    pub goal_reward: f64,
    pub max_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridState {
    pub pos: Cell,
    pub steps_taken: usize,
}

impl GridSpec {
    /// Validates invariants, including reachability of the goal.
    pub fn new(name: &str, size: usize, walls: BTreeSet<Cell>, start: Cell, goal: Cell) -> Result<Self, EnvError> {
        let spec = Self {
            name: name.to_string(),
            size,
            walls,
            start,
            goal,
            step_penalty: DEFAULT_STEP_PENALTY,
            goal_reward: DEFAULT_GOAL_REWARD,
            max_steps: DEFAULT_MAX_STEPS,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps.max(1);
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let inside = |(r, c): Cell| r < self.size && c < self.size;
        if self.size == 0 {
            return Err(EnvError::InvalidLayout("size must be positive".into()));
        }
        if let Some(w) = self.walls.iter().find(|w| !inside(**w)) {
            return Err(EnvError::InvalidLayout(format!("wall {w:?} outside grid")));
        }
        if !inside(self.start) || !inside(self.goal) {
            return Err(EnvError::InvalidLayout("start or goal outside grid".into()));
        }
        if self.start == self.goal {
            return Err(EnvError::InvalidLayout("start equals goal".into()));
        }
        if self.walls.contains(&self.start) || self.walls.contains(&self.goal) {
            return Err(EnvError::InvalidLayout("start or goal inside a wall".into()));
        }
        if self.max_steps == 0 {
            return Err(EnvError::InvalidLayout("max_steps must be positive".into()));
        }
        if self.shortest_path_len().is_none() {
            return Err(EnvError::Unreachable);
        }
        Ok(())
    }

    /// Built-in layout by id (`grid1`, `grid2`, `grid3`, `grid6`, `grid7`,
    /// `grid8`) at the given side length.
    pub fn builtin(id: &str, size: usize) -> Result<Self, EnvError> {
        layouts::canonical(id, size)
    }

    /// Parses the text layout format: one row per line, `.` free, `#` wall,
    /// `S` start, `G` goal. Blank trailing lines are ignored.
    pub fn parse(name: &str, text: &str) -> Result<Self, EnvError> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
        let rows: Vec<(usize, &str)> = lines
            .iter()
            .enumerate()
            .map(|(i, l)| (i + 1, *l))
            .filter(|(_, l)| !l.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(EnvError::Parse {
                line: 1,
                msg: "empty layout".into(),
            });
        }
        let size = rows.len();
        let mut walls = BTreeSet::new();
        let (mut start, mut goal) = (None, None);
        for (r, (line_no, line)) in rows.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != size {
                return Err(EnvError::Parse {
                    line: *line_no,
                    msg: format!("expected {size} columns, found {}", chars.len()),
                });
            }
            for (c, ch) in chars.into_iter().enumerate() {
                match ch {
                    '.' => {}
                    '#' => {
                        walls.insert((r, c));
                    }
                    'S' | 'G' => {
                        let slot = if ch == 'S' { &mut start } else { &mut goal };
                        if slot.replace((r, c)).is_some() {
                            return Err(EnvError::Parse {
                                line: *line_no,
                                msg: format!("more than one `{ch}`"),
                            });
                        }
                    }
                    other => {
                        return Err(EnvError::Parse {
                            line: *line_no,
                            msg: format!("unexpected character `{other}`"),
                        })
                    }
                }
            }
        }
        let last = rows.last().map(|(l, _)| *l).unwrap_or(1);
        let start = start.ok_or(EnvError::Parse {
            line: last,
            msg: "no `S` in layout".into(),
        })?;
        let goal = goal.ok_or(EnvError::Parse {
            line: last,
            msg: "no `G` in layout".into(),
        })?;
        Self::new(name, size, walls, start, goal)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnvError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "layout".into());
        Self::parse(&name, &text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.size * (self.size + 1));
        for r in 0..self.size {
            for c in 0..self.size {
                let ch = if (r, c) == self.start {
                    'S'
                } else if (r, c) == self.goal {
                    'G'
                } else if self.walls.contains(&(r, c)) {
                    '#'
                } else {
                    '.'
                };
                out.push(ch);
            }
            let _ = writeln!(out);
        }
        out
    }

    pub fn is_wall(&self, cell: Cell) -> bool {
        self.walls.contains(&cell)
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.size)
            .flat_map(|r| (0..self.size).map(move |c| (r, c)))
            .filter(|c| !self.walls.contains(c))
            .collect()
    }

    /// Cell reached by `action` from `pos`; walls and the boundary block.
    pub fn next_cell(&self, pos: Cell, action: GridAction) -> Cell {
        let (dr, dc) = action.delta();
        let r = pos.0 as isize + dr;
        let c = pos.1 as isize + dc;
        if r < 0 || c < 0 || r >= self.size as isize || c >= self.size as isize {
            return pos;
        }
        let next = (r as usize, c as usize);
        if self.walls.contains(&next) {
            pos
        } else {
            next
        }
    }

    /// BFS distance from start to goal through free cells.
    pub fn shortest_path_len(&self) -> Option<usize> {
        let n = self.size;
        let mut dist = vec![usize::MAX; n * n];
        let mut queue = VecDeque::from([self.start]);
        dist[self.start.0 * n + self.start.1] = 0;
        while let Some(cell) = queue.pop_front() {
            let d = dist[cell.0 * n + cell.1];
            if cell == self.goal {
                return Some(d);
            }
            for a in GridAction::ALL {
                let next = self.next_cell(cell, a);
                let slot = &mut dist[next.0 * n + next.1];
                if *slot == usize::MAX {
                    *slot = d + 1;
                    queue.push_back(next);
                }
            }
        }
        None
    }

    pub fn reset_state(&self) -> GridState {
        GridState {
            pos: self.start,
            steps_taken: 0,
        }
    }

    pub fn is_done(&self, state: &GridState) -> bool {
        state.pos == self.goal || state.steps_taken >= self.max_steps
    }

    pub fn step_action(&self, state: &GridState, action: GridAction) -> Result<Transition<GridState>, EnvError> {
        if self.is_done(state) {
            return Err(EnvError::EpisodeDone);
        }
        let pos = self.next_cell(state.pos, action);
        let next = GridState {
            pos,
            steps_taken: state.steps_taken + 1,
        };
        let mut reward = self.step_penalty;
        if pos == self.goal {
            reward += self.goal_reward;
        }
        Ok(Transition {
            done: self.is_done(&next),
            state: next,
            reward,
        })
    }

    /// One-hot of length `size^2` at `row * size + col`.
    pub fn encode_obs(&self, state: &GridState) -> Vec<f64> {
        let mut obs = vec![0.0; self.size * self.size];
        obs[state.pos.0 * self.size + state.pos.1] = 1.0;
        obs
    }
}

impl Environment for GridSpec {
    type State = GridState;

    fn obs_dim(&self) -> usize {
        self.size * self.size
    }

    fn action_count(&self) -> usize {
        4
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&self, _episode_index: u64) -> GridState {
        self.reset_state()
    }

    fn step(&self, state: &GridState, action: usize) -> Result<Transition<GridState>, EnvError> {
        self.step_action(state, GridAction::from_index(action)?)
    }

    fn observe(&self, state: &GridState) -> Vec<f64> {
        self.encode_obs(state)
    }

    fn input_space(&self) -> Option<Vec<Vec<f64>>> {
        Some(
            self.free_cells()
                .into_iter()
                .map(|pos| self.encode_obs(&GridState { pos, steps_taken: 0 }))
                .collect(),
        )
    }
}
