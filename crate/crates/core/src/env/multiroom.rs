//! Procedural chain of square rooms joined by doors, observed through an
//! egocentric window.
//!
//! `room_size` is the outer side length of a room including its walls, so a
//! size-4 room has a 2x2 floor. The chain sits at a random position in a
//! 25x25 world (larger when the chain does not fit). Consecutive rooms
//! share one wall segment that holds exactly one door; non-consecutive
//! rooms never touch.

use std::sync::{Arc, Mutex};

use rand::Rng as _;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{EnvError, Environment, Transition};
use crate::rng::{mix, Rng};

pub const VIEW: usize = 7;
pub const CHANNELS: usize = 4;
pub const OBS_DIM: usize = VIEW * VIEW * CHANNELS + 4;
pub const STEP_PENALTY: f64 = -0.01;
pub const GOAL_REWARD: f64 = 1.0;
const PLACEMENT_TRIES: usize = 32;
const DERIVED_SEEDS: usize = 100;
/// Side of the square world the room chain is placed in.
const GLOBAL_SIDE: i64 = 25;

pub type Pos = (i64, i64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Self::N, Self::E, Self::S, Self::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> Pos {
        match self {
            Self::N => (-1, 0),
            Self::E => (0, 1),
            Self::S => (1, 0),
            Self::W => (0, -1),
        }
    }

    pub fn left(self) -> Self {
        Self::ALL[(self.index() + 3) % 4]
    }

    pub fn right(self) -> Self {
        Self::ALL[(self.index() + 1) % 4]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MultiRoomAction {
    TurnLeft,
    TurnRight,
    Forward,
    Toggle,
}

impl MultiRoomAction {
    pub const ALL: [Self; 4] = [Self::TurnLeft, Self::TurnRight, Self::Forward, Self::Toggle];

    pub fn from_index(i: usize) -> Result<Self, EnvError> {
        Self::ALL.get(i).copied().ok_or(EnvError::InvalidAction(i))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Room {
    pub top: i64,
    pub left: i64,
    pub size: i64,
}

impl Room {
    fn bottom(&self) -> i64 {
        self.top + self.size - 1
    }

    fn right(&self) -> i64 {
        self.left + self.size - 1
    }

    fn contains(&self, (r, c): Pos) -> bool {
        r >= self.top && r <= self.bottom() && c >= self.left && c <= self.right()
    }

    fn is_interior(&self, (r, c): Pos) -> bool {
        r > self.top && r < self.bottom() && c > self.left && c < self.right()
    }

    fn intersects(&self, other: &Room) -> bool {
        self.top <= other.bottom()
            && other.top <= self.bottom()
            && self.left <= other.right()
            && other.left <= self.right()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tile {
    Wall,
    Floor,
    Door(usize),
    Goal,
}

/// Immutable generated layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiRoomSpec {
    pub n_rooms: usize,
    pub room_size: usize,
    pub height: usize,
    pub width: usize,
    pub rooms: Vec<Room>,
    /// Door cells; `doors[i]` joins `rooms[i]` and `rooms[i + 1]`.
    pub doors: Vec<Pos>,
    pub goal: Pos,
    pub agent_start: Pos,
    pub start_heading: Heading,
    pub layout_seed: u64,
    pub max_steps: usize,
    #[serde(skip)]
    tiles: Vec<Tile>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiRoomState {
    pub pos: Pos,
    pub heading: Heading,
    pub door_open: Vec<bool>,
    pub steps_taken: usize,
}

impl MultiRoomSpec {
    /// Deterministic in `layout_seed`. A seed whose placement keeps failing
    /// is replaced by `mix(layout_seed, attempt)`; generation errors only
    /// after 100 such derived seeds.
    pub fn generate(n_rooms: usize, room_size: usize, layout_seed: u64) -> Result<Self, EnvError> {
        if !(2..=4).contains(&n_rooms) {
            return Err(EnvError::InvalidLayout(format!(
                "n_rooms must be in [2, 4], got {n_rooms}"
            )));
        }
        if !(4..=8).contains(&room_size) {
            return Err(EnvError::InvalidLayout(format!(
                "room_size must be in [4, 8], got {room_size}"
            )));
        }
        for attempt in 0..DERIVED_SEEDS {
            let seed = if attempt == 0 {
                layout_seed
            } else {
                mix(layout_seed, attempt as u64)
            };
            let mut rng = Rng::seed_from_u64(seed);
            if let Some(spec) = Self::try_place(n_rooms, room_size, layout_seed, &mut rng) {
                return Ok(spec);
            }
        }
        Err(EnvError::GenerationFailed(DERIVED_SEEDS))
    }

    fn try_place(n_rooms: usize, room_size: usize, layout_seed: u64, rng: &mut Rng) -> Option<Self> {
        let s = room_size as i64;
        let mut rooms = vec![Room {
            top: 0,
            left: 0,
            size: s,
        }];
        let mut doors = Vec::new();
        for _ in 1..n_rooms {
            let prev = *rooms.last().unwrap();
            let mut placed = false;
            for _ in 0..PLACEMENT_TRIES {
                let dir = Heading::ALL[rng.random_range(0..4)];
                let offset = rng.random_range(-(s - 3)..=(s - 3));
                let room = match dir {
                    Heading::N => Room {
                        top: prev.top - (s - 1),
                        left: prev.left + offset,
                        size: s,
                    },
                    Heading::S => Room {
                        top: prev.bottom(),
                        left: prev.left + offset,
                        size: s,
                    },
                    Heading::W => Room {
                        top: prev.top + offset,
                        left: prev.left - (s - 1),
                        size: s,
                    },
                    Heading::E => Room {
                        top: prev.top + offset,
                        left: prev.right(),
                        size: s,
                    },
                };
                let earlier = &rooms[..rooms.len() - 1];
                if earlier.iter().any(|r| r.intersects(&room)) {
                    continue;
                }
                // door on the shared wall, adjacent to floor on both sides
                let door = match dir {
                    Heading::N | Heading::S => {
                        let lo = prev.left.max(room.left) + 1;
                        let hi = prev.right().min(room.right()) - 1;
                        let row = if dir == Heading::N { prev.top } else { prev.bottom() };
                        (row, rng.random_range(lo..=hi))
                    }
                    Heading::E | Heading::W => {
                        let lo = prev.top.max(room.top) + 1;
                        let hi = prev.bottom().min(room.bottom()) - 1;
                        let col = if dir == Heading::W { prev.left } else { prev.right() };
                        (rng.random_range(lo..=hi), col)
                    }
                };
                rooms.push(room);
                doors.push(door);
                placed = true;
                break;
            }
            if !placed {
                return None;
            }
        }

        let min_r = rooms.iter().map(|r| r.top).min().unwrap();
        let min_c = rooms.iter().map(|r| r.left).min().unwrap();
        let extent_r = rooms.iter().map(|r| r.bottom()).max().unwrap() - min_r + 1;
        let extent_c = rooms.iter().map(|r| r.right()).max().unwrap() - min_c + 1;
        let side = GLOBAL_SIDE.max(extent_r).max(extent_c);
        let shift_r = rng.random_range(0..=side - extent_r) - min_r;
        let shift_c = rng.random_range(0..=side - extent_c) - min_c;
        for r in rooms.iter_mut() {
            r.top += shift_r;
            r.left += shift_c;
        }
        for d in doors.iter_mut() {
            d.0 += shift_r;
            d.1 += shift_c;
        }
        let (height, width) = (side as usize, side as usize);

        let interior = |room: &Room, rng: &mut Rng| -> Pos {
            (
                rng.random_range(room.top + 1..room.bottom()),
                rng.random_range(room.left + 1..room.right()),
            )
        };
        let goal = interior(rooms.last().unwrap(), rng);
        let mut agent_start = interior(&rooms[0], rng);
        while agent_start == goal {
            agent_start = interior(&rooms[0], rng);
        }
        let start_heading = Heading::ALL[rng.random_range(0..4)];

        let mut spec = Self {
            n_rooms,
            room_size,
            height,
            width,
            rooms,
            doors,
            goal,
            agent_start,
            start_heading,
            layout_seed,
            max_steps: 20 * n_rooms * room_size,
            tiles: Vec::new(),
        };
        spec.rebuild_tiles();
        Some(spec)
    }

    fn rebuild_tiles(&mut self) {
        let mut tiles = vec![Tile::Wall; self.height * self.width];
        for room in &self.rooms {
            for r in room.top..=room.bottom() {
                for c in room.left..=room.right() {
                    if room.is_interior((r, c)) {
                        tiles[r as usize * self.width + c as usize] = Tile::Floor;
                    }
                }
            }
        }
        for (i, d) in self.doors.iter().enumerate() {
            tiles[d.0 as usize * self.width + d.1 as usize] = Tile::Door(i);
        }
        tiles[self.goal.0 as usize * self.width + self.goal.1 as usize] = Tile::Goal;
        self.tiles = tiles;
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut spec: Self = serde_json::from_str(text)?;
        spec.rebuild_tiles();
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Tile at `pos`; anything off the map is wall.
    pub fn tile(&self, (r, c): Pos) -> Tile {
        if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
            return Tile::Wall;
        }
        self.tiles[r as usize * self.width + c as usize]
    }

    pub fn room_of(&self, pos: Pos) -> Option<usize> {
        self.rooms.iter().position(|r| r.is_interior(pos))
    }

    pub fn rooms_share_wall(&self, a: usize, b: usize) -> bool {
        let (ra, rb) = (&self.rooms[a], &self.rooms[b]);
        ra.intersects(rb)
    }

    pub fn door_in_room_wall(&self, door: usize, room: usize) -> bool {
        let r = &self.rooms[room];
        r.contains(self.doors[door]) && !r.is_interior(self.doors[door])
    }

    pub fn reset_state(&self) -> MultiRoomState {
        MultiRoomState {
            pos: self.agent_start,
            heading: self.start_heading,
            door_open: vec![false; self.doors.len()],
            steps_taken: 0,
        }
    }

    pub fn is_done(&self, state: &MultiRoomState) -> bool {
        state.pos == self.goal || state.steps_taken >= self.max_steps
    }

    fn ahead(pos: Pos, heading: Heading) -> Pos {
        let (dr, dc) = heading.delta();
        (pos.0 + dr, pos.1 + dc)
    }

    pub fn step_action(
        &self,
        state: &MultiRoomState,
        action: MultiRoomAction,
    ) -> Result<Transition<MultiRoomState>, EnvError> {
        if self.is_done(state) {
            return Err(EnvError::EpisodeDone);
        }
        let mut next = state.clone();
        next.steps_taken += 1;
        let front = Self::ahead(state.pos, state.heading);
        match action {
            MultiRoomAction::TurnLeft => next.heading = state.heading.left(),
            MultiRoomAction::TurnRight => next.heading = state.heading.right(),
            MultiRoomAction::Forward => match self.tile(front) {
                Tile::Wall => {}
                Tile::Door(i) if !state.door_open[i] => {}
                _ => next.pos = front,
            },
            MultiRoomAction::Toggle => {
                if let Tile::Door(i) = self.tile(front) {
                    next.door_open[i] = !next.door_open[i];
                }
            }
        }
        let mut reward = STEP_PENALTY;
        if next.pos == self.goal && state.pos != self.goal {
            reward += GOAL_REWARD;
        }
        Ok(Transition {
            done: self.is_done(&next),
            state: next,
            reward,
        })
    }

    /// World cell shown at window position `(row, col)`: row 0 is farthest
    /// ahead, row 6 is the agent's own row, column 3 is straight ahead.
    pub fn window_cell(state: &MultiRoomState, row: usize, col: usize) -> Pos {
        let fwd = state.heading.delta();
        let right = state.heading.right().delta();
        let f = (VIEW - 1 - row) as i64;
        let l = col as i64 - (VIEW / 2) as i64;
        (
            state.pos.0 + f * fwd.0 + l * right.0,
            state.pos.1 + f * fwd.1 + l * right.1,
        )
    }

    /// 7x7x4 window (wall, closed door, open door, goal) flattened row-major
    /// with channels innermost, followed by a heading one-hot: 200 values.
    pub fn encode_obs(&self, state: &MultiRoomState) -> Vec<f64> {
        let mut obs = vec![0.0; OBS_DIM];
        for row in 0..VIEW {
            for col in 0..VIEW {
                let base = (row * VIEW + col) * CHANNELS;
                let channel = match self.tile(Self::window_cell(state, row, col)) {
                    Tile::Wall => Some(0),
                    Tile::Door(i) if !state.door_open[i] => Some(1),
                    Tile::Door(_) => Some(2),
                    Tile::Goal => Some(3),
                    Tile::Floor => None,
                };
                if let Some(ch) = channel {
                    obs[base + ch] = 1.0;
                }
            }
        }
        obs[VIEW * VIEW * CHANNELS + state.heading.index()] = 1.0;
        obs
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeTag {
    Static,
    Dynamic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMode {
    pub tag: ModeTag,
    pub base_seed: u64,
}

impl EpisodeMode {
    pub fn fixed(base_seed: u64) -> Self {
        Self {
            tag: ModeTag::Static,
            base_seed,
        }
    }

    pub fn dynamic(base_seed: u64) -> Self {
        Self {
            tag: ModeTag::Dynamic,
            base_seed,
        }
    }

    /// Static: `base_seed`. Dynamic: `mix(base_seed, episode_index)`.
    pub fn layout_seed(&self, episode_index: u64) -> u64 {
        match self.tag {
            ModeTag::Static => self.base_seed,
            ModeTag::Dynamic => mix(self.base_seed, episode_index),
        }
    }
}

/// Multi-room task family (`n_rooms`, `room_size`) under an episode mode.
#[derive(Debug)]
pub struct MultiRoomEnv {
    pub n_rooms: usize,
    pub room_size: usize,
    pub mode: EpisodeMode,
    fixed: Option<Arc<MultiRoomSpec>>,
    cache: Mutex<Option<(u64, Arc<MultiRoomSpec>)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiRoomEpisode {
    pub spec: Arc<MultiRoomSpec>,
    pub state: MultiRoomState,
}

impl MultiRoomEnv {
    pub fn new(n_rooms: usize, room_size: usize, mode: EpisodeMode) -> Result<Self, EnvError> {
        // validates the parameters even in dynamic mode
        let base = MultiRoomSpec::generate(n_rooms, room_size, mode.base_seed)?;
        let fixed = (mode.tag == ModeTag::Static).then(|| Arc::new(base));
        Ok(Self {
            n_rooms,
            room_size,
            mode,
            fixed,
            cache: Mutex::new(None),
        })
    }

    /// Parses ids such as `n2s4` / `N3S4`.
    pub fn parse_id(id: &str) -> Option<(usize, usize)> {
        let lower = id.to_ascii_lowercase();
        let rest = lower.strip_prefix('n')?;
        let (n, s) = rest.split_once('s')?;
        Some((n.parse().ok()?, s.parse().ok()?))
    }

    pub fn spec_for(&self, episode_index: u64) -> Arc<MultiRoomSpec> {
        if let Some(spec) = &self.fixed {
            return spec.clone();
        }
        let seed = self.mode.layout_seed(episode_index);
        let mut cache = self.cache.lock().expect("cache lock");
        if let Some((s, spec)) = cache.as_ref() {
            if *s == seed {
                return spec.clone();
            }
        }
        let spec = Arc::new(
            MultiRoomSpec::generate(self.n_rooms, self.room_size, seed).expect("parameters validated at construction"),
        );
        *cache = Some((seed, spec.clone()));
        spec
    }

    /// Layout and initial state for an episode; all doors start closed.
    pub fn reset_episode(&self, episode_index: u64) -> MultiRoomEpisode {
        let spec = self.spec_for(episode_index);
        let state = spec.reset_state();
        MultiRoomEpisode { spec, state }
    }
}

impl Environment for MultiRoomEnv {
    type State = MultiRoomEpisode;

    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn action_count(&self) -> usize {
        4
    }

    fn max_steps(&self) -> usize {
        20 * self.n_rooms * self.room_size
    }

    fn reset(&self, episode_index: u64) -> MultiRoomEpisode {
        self.reset_episode(episode_index)
    }

    fn step(&self, ep: &MultiRoomEpisode, action: usize) -> Result<Transition<MultiRoomEpisode>, EnvError> {
        let t = ep.spec.step_action(&ep.state, MultiRoomAction::from_index(action)?)?;
        Ok(Transition {
            state: MultiRoomEpisode {
                spec: ep.spec.clone(),
                state: t.state,
            },
            reward: t.reward,
            done: t.done,
        })
    }

    fn observe(&self, ep: &MultiRoomEpisode) -> Vec<f64> {
        ep.spec.encode_obs(&ep.state)
    }

    fn input_space(&self) -> Option<Vec<Vec<f64>>> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn face(spec: &MultiRoomSpec, door: usize) -> MultiRoomState {
        // stand on the floor cell next to the door in room `door`, facing it
        let d = spec.doors[door];
        for h in Heading::ALL {
            let (dr, dc) = h.delta();
            let from = (d.0 - dr, d.1 - dc);
            if spec.room_of(from) == Some(door) {
                return MultiRoomState {
                    pos: from,
                    heading: h,
                    door_open: vec![false; spec.doors.len()],
                    steps_taken: 0,
                };
            }
        }
        panic!("door {door} has no floor neighbour in its room");
    }

    #[test]
    fn generation_is_deterministic() {
        for seed in 0..20 {
            assert_eq!(
                MultiRoomSpec::generate(2, 4, seed).unwrap(),
                MultiRoomSpec::generate(2, 4, seed).unwrap()
            );
        }
    }

    #[test]
    fn door_count_follows_chain() {
        for seed in 0..50 {
            assert_eq!(MultiRoomSpec::generate(2, 4, seed).unwrap().doors.len(), 1);
            assert_eq!(MultiRoomSpec::generate(3, 4, seed).unwrap().doors.len(), 2);
        }
    }

    #[test]
    fn consecutive_rooms_share_wall_with_their_door() {
        for seed in 0..200 {
            let s = MultiRoomSpec::generate(4, 5, seed).unwrap();
            for i in 0..s.n_rooms - 1 {
                assert!(s.rooms_share_wall(i, i + 1));
                assert!(s.door_in_room_wall(i, i) && s.door_in_room_wall(i, i + 1));
            }
            for i in 0..s.n_rooms {
                for j in i + 2..s.n_rooms {
                    assert!(!s.rooms_share_wall(i, j), "seed {seed}: rooms {i},{j}");
                }
            }
            assert_eq!(s.room_of(s.goal), Some(s.n_rooms - 1));
            assert_eq!(s.room_of(s.agent_start), Some(0));
        }
    }

    #[test]
    fn parameter_bounds() {
        assert!(MultiRoomSpec::generate(1, 4, 0).is_err());
        assert!(MultiRoomSpec::generate(2, 3, 0).is_err());
        assert!(MultiRoomSpec::generate(5, 4, 0).is_err());
    }

    #[test]
    fn closed_door_blocks_until_toggled() {
        let spec = MultiRoomSpec::generate(2, 4, 9).unwrap();
        let s = face(&spec, 0);
        let t = spec.step_action(&s, MultiRoomAction::Forward).unwrap();
        assert_eq!(t.state.pos, s.pos);
        assert_eq!(t.reward, STEP_PENALTY);
        let t = spec.step_action(&s, MultiRoomAction::Toggle).unwrap();
        assert!(t.state.door_open[0]);
        let t = spec.step_action(&t.state, MultiRoomAction::Forward).unwrap();
        assert_eq!(t.state.pos, spec.doors[0]);
    }

    #[test]
    fn entering_goal_pays_and_ends() {
        let spec = MultiRoomSpec::generate(2, 6, 4).unwrap();
        let (gr, gc) = spec.goal;
        let (pos, heading) = Heading::ALL
            .iter()
            .map(|h| {
                let (dr, dc) = h.delta();
                ((gr - dr, gc - dc), *h)
            })
            .find(|(p, _)| spec.tile(*p) == Tile::Floor)
            .unwrap();
        let s = MultiRoomState {
            pos,
            heading,
            door_open: vec![true; spec.doors.len()],
            steps_taken: 3,
        };
        let t = spec.step_action(&s, MultiRoomAction::Forward).unwrap();
        assert!((t.reward - 0.99).abs() < 1e-15);
        assert!(t.done);
        assert_eq!(
            spec.step_action(&t.state, MultiRoomAction::TurnLeft),
            Err(EnvError::EpisodeDone)
        );
    }

    #[test]
    fn static_mode_repeats_and_dynamic_varies() {
        let env = MultiRoomEnv::new(2, 4, EpisodeMode::fixed(17)).unwrap();
        assert_eq!(env.reset_episode(0), env.reset_episode(7));
        let env = MultiRoomEnv::new(2, 4, EpisodeMode::dynamic(17)).unwrap();
        let distinct: HashSet<String> = (0..100)
            .map(|i| {
                let mut s = (*env.reset_episode(i).spec).clone();
                s.layout_seed = 0;
                s.to_json()
            })
            .collect();
        assert!(distinct.len() >= 95, "{}", distinct.len());
        assert!(env.reset_episode(3).state.door_open.iter().all(|o| !o));
    }

    #[test]
    fn window_sees_wall_ahead_and_nothing_behind() {
        let spec = MultiRoomSpec::generate(2, 4, 1).unwrap();
        let mut s = spec.reset_state();
        // turn until the cell ahead is a wall
        while spec.tile(MultiRoomSpec::ahead(s.pos, s.heading)) != Tile::Wall {
            s.heading = s.heading.right();
        }
        let obs = spec.encode_obs(&s);
        assert_eq!(obs.len(), 200);
        let ahead_idx = ((VIEW - 2) * VIEW + VIEW / 2) * CHANNELS;
        assert_eq!(obs[ahead_idx], 1.0);
        let (dr, dc) = s.heading.delta();
        for row in 0..VIEW {
            for col in 0..VIEW {
                let (r, c) = MultiRoomSpec::window_cell(&s, row, col);
                let along = (r - s.pos.0) * dr + (c - s.pos.1) * dc;
                assert!(along >= 0);
            }
        }
        assert_eq!(obs[VIEW * VIEW * CHANNELS + s.heading.index()], 1.0);
    }

    #[test]
    fn identical_windows_alias() {
        let spec = MultiRoomSpec::generate(2, 8, 2).unwrap();
        let s = spec.reset_state();
        let mut moved = s.clone();
        moved.steps_taken = 5;
        assert_eq!(spec.encode_obs(&s), spec.encode_obs(&moved));
    }

    #[test]
    fn json_round_trip() {
        let spec = MultiRoomSpec::generate(3, 6, 77).unwrap();
        let back = MultiRoomSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.tile(back.goal), Tile::Goal);
    }
}
