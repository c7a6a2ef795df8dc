use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::env::grid::Cell;
use crate::env::layouts::BUILTIN_IDS;
use crate::env::multiroom::{Heading, MultiRoomEnv, MultiRoomSpec, Pos, Tile};
use crate::env::{EpisodeMode, GridSpec};
use crate::rng::mix;

pub const GRID_SIZES: [usize; 3] = [6, 10, 20];
const EPISODES_PER_MODE: u64 = 100;
const MIN_DISTINCT: usize = 95;

/// Shortest start-to-goal path length by plain 4-neighbour BFS over the
/// wall set.
pub fn grid_bfs_len(spec: &GridSpec) -> Option<usize> {
    let n = spec.size as i64;
    let mut dist = vec![usize::MAX; spec.size * spec.size];
    let idx = |(r, c): Cell| r * spec.size + c;
    let mut queue = VecDeque::from([spec.start]);
    dist[idx(spec.start)] = 0;
    while let Some(cell) = queue.pop_front() {
        if cell == spec.goal {
            return Some(dist[idx(cell)]);
        }
        for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (r, c) = (cell.0 as i64 + dr, cell.1 as i64 + dc);
            if r < 0 || c < 0 || r >= n || c >= n {
                continue;
            }
            let next = (r as usize, c as usize);
            if spec.walls.contains(&next) || dist[idx(next)] != usize::MAX {
                continue;
            }
            dist[idx(next)] = dist[idx(cell)] + 1;
            queue.push_back(next);
        }
    }
    None
}

/// Fewest actions from the start to the goal, searching over position,
/// heading and the open/closed state of every door. Turns, forward moves
/// and door toggles each cost one action.
pub fn multiroom_bfs_len(spec: &MultiRoomSpec) -> Option<usize> {
    type Node = (Pos, usize, u64);
    let start: Node = (spec.agent_start, spec.start_heading.index(), 0);
    let mut seen = HashSet::from([start]);
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some(((pos, h, mask), d)) = queue.pop_front() {
        if pos == spec.goal {
            return Some(d);
        }
        let (dr, dc) = Heading::ALL[h].delta();
        let front = (pos.0 + dr, pos.1 + dc);
        let mut next = vec![(pos, (h + 3) % 4, mask), (pos, (h + 1) % 4, mask)];
        match spec.tile(front) {
            Tile::Wall => {}
            Tile::Door(i) => {
                next.push((pos, h, mask ^ (1 << i)));
                if mask & (1 << i) != 0 {
                    next.push((front, h, mask));
                }
            }
            Tile::Floor | Tile::Goal => next.push((front, h, mask)),
        }
        for n in next {
            if seen.insert(n) {
                queue.push_back((n, d + 1));
            }
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCheck {
    pub id: String,
    pub size: usize,
    pub path_len: Option<usize>,
    pub max_steps: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeCheck {
    pub family: String,
    pub static_identical: bool,
    pub dynamic_distinct: usize,
    pub episodes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvOracleReport {
    pub grids: Vec<GridCheck>,
    pub multiroom_seeds: usize,
    pub multiroom_solvable: usize,
    /// Longest shortest path seen relative to the step cap.
    pub worst_path_fraction: f64,
    /// `(n_rooms, room_size, seed)` of every failed layout.
    pub multiroom_failures: Vec<(usize, usize, u64)>,
    pub modes: Vec<ModeCheck>,
}

impl EnvOracleReport {
    pub fn passed(&self) -> bool {
        self.grids.iter().all(|g| g.passed)
            && self.multiroom_failures.is_empty()
            && self.multiroom_solvable == self.multiroom_seeds
            && self
                .modes
                .iter()
                .all(|m| m.static_identical && m.dynamic_distinct >= MIN_DISTINCT)
    }
}

fn families() -> Vec<(usize, usize)> {
    (2..=4).flat_map(|n| (4..=8).map(move |s| (n, s))).collect()
}

/// Layout geometry without the seed it came from.
fn geometry(spec: &MultiRoomSpec) -> String {
    let mut s = spec.clone();
    s.layout_seed = 0;
    s.to_json()
}

fn check_modes(n: usize, s: usize, seed: u64) -> ModeCheck {
    let family = format!("n{n}s{s}");
    let fixed = MultiRoomEnv::new(n, s, EpisodeMode::fixed(seed)).expect("valid family");
    let first = fixed.spec_for(0);
    let static_identical = (1..EPISODES_PER_MODE).all(|i| *fixed.spec_for(i) == *first);
    let dynamic = MultiRoomEnv::new(n, s, EpisodeMode::dynamic(seed)).expect("valid family");
    let distinct: HashSet<String> = (0..EPISODES_PER_MODE).map(|i| geometry(&dynamic.spec_for(i))).collect();
    ModeCheck {
        family,
        static_identical,
        dynamic_distinct: distinct.len(),
        episodes: EPISODES_PER_MODE,
    }
}

/// Every canonical grid at several sizes must be solvable within its step
/// cap; `n_seeds` generated multi-room layouts, cycling through all
/// families, must be solvable within theirs; static mode must repeat one
/// layout and dynamic mode must give at least 95 distinct layouts in 100
/// episodes.
pub fn env_oracle(n_seeds: usize, seed: u64) -> EnvOracleReport {
    let mut grids = Vec::new();
    for size in GRID_SIZES {
        for id in BUILTIN_IDS {
            let spec = GridSpec::builtin(id, size).expect("canonical layout");
            let path_len = grid_bfs_len(&spec);
            grids.push(GridCheck {
                id: id.to_string(),
                size,
                path_len,
                max_steps: spec.max_steps,
                passed: path_len.is_some_and(|d| d <= spec.max_steps),
            });
        }
    }

    let fams = families();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..n_seeds {
        let (n, s) = fams[i % fams.len()];
        let layout_seed = mix(seed, i as u64);
        match MultiRoomSpec::generate(n, s, layout_seed) {
            Ok(spec) => match multiroom_bfs_len(&spec) {
                Some(d) if d <= spec.max_steps => worst = worst.max(d as f64 / spec.max_steps as f64),
                _ => failures.push((n, s, layout_seed)),
            },
            Err(_) => failures.push((n, s, layout_seed)),
        }
    }

    let modes = fams.iter().map(|&(n, s)| check_modes(n, s, seed)).collect();
    EnvOracleReport {
        grids,
        multiroom_seeds: n_seeds,
        multiroom_solvable: n_seeds - failures.len(),
        worst_path_fraction: worst,
        multiroom_failures: failures,
        modes,
    }
}
