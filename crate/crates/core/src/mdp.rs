//! The treasure-hunt grid world.
//!
//! A rectangular grid with one start cell, one treasure and one exit. Walls
//! sit on edges between adjacent cells: the robot may try to cross them, is
//! penalized and stays put. Actions that would leave the grid are masked and
//! never offered.
//!
//! The Markov state is the cell plus a "treasure collected" flag, so a grid of
//! `w x h` cells has `2wh` states.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A cell of the grid. Row 0 is the top row, column 0 the left column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

impl GridPos {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Cell reached by moving one step in `action`, or `None` if that leaves
    /// a `width x height` grid.
    pub fn neighbor(self, action: Action, width: usize, height: usize) -> Option<GridPos> {
        let (dr, dc) = action.delta();
        let row = self.row.checked_add_signed(dr)?;
        let col = self.col.checked_add_signed(dc)?;
        (row < height && col < width).then_some(GridPos { row, col })
    }

    pub fn in_bounds(self, width: usize, height: usize) -> bool {
        self.row < height && self.col < width
    }

    pub fn is_adjacent(self, other: GridPos) -> bool {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col) == 1
    }
}

impl From<[usize; 2]> for GridPos {
    fn from([row, col]: [usize; 2]) -> Self {
        Self { row, col }
    }
}

impl From<GridPos> for [usize; 2] {
    fn from(p: GridPos) -> Self {
        [p.row, p.col]
    }
}

impl fmt::Display for GridPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// One of the four cardinal moves. The discriminant is the column index used
/// by the Q-table and visit counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Action {
    pub const COUNT: usize = 4;
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }

    /// (row, col) displacement.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }

    pub fn arrow(self) -> char {
        match self {
            Action::Up => '↑',
            Action::Down => '↓',
            Action::Left => '←',
            Action::Right => '→',
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// An undirected blocked edge between two 4-adjacent cells, stored with the
/// smaller cell first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "[GridPos; 2]", into = "[GridPos; 2]")]
pub struct WallEdge {
    a: GridPos,
    b: GridPos,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("wall cells {0} and {1} are not adjacent")]
pub struct NotAdjacent(pub GridPos, pub GridPos);

impl WallEdge {
    pub fn new(a: GridPos, b: GridPos) -> Result<Self, NotAdjacent> {
        if !a.is_adjacent(b) {
            return Err(NotAdjacent(a, b));
        }
        Ok(if a <= b { Self { a, b } } else { Self { a: b, b: a } })
    }

    pub fn a(&self) -> GridPos {
        self.a
    }

    pub fn b(&self) -> GridPos {
        self.b
    }

    pub fn blocks(&self, from: GridPos, to: GridPos) -> bool {
        (self.a == from && self.b == to) || (self.a == to && self.b == from)
    }
}

impl TryFrom<[GridPos; 2]> for WallEdge {
    type Error = NotAdjacent;

    fn try_from([a, b]: [GridPos; 2]) -> Result<Self, Self::Error> {
        WallEdge::new(a, b)
    }
}

impl From<WallEdge> for [GridPos; 2] {
    fn from(w: WallEdge) -> Self {
        [w.a, w.b]
    }
}

impl fmt::Display for WallEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.a, self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSpec {
    pub treasure: f64,
    pub exit: f64,
    pub wall: f64,
    pub step: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            treasure: 20.0,
            exit: 30.0,
            wall: -10.0,
            step: -1.0,
        }
    }
}

pub const DEFAULT_MAX_STEPS: u32 = 100;

/// Static description of a maze.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MazeConfig {
    pub width: usize,
    pub height: usize,
    pub start: GridPos,
    pub treasure: GridPos,
    pub exit: GridPos,
    pub walls: Vec<WallEdge>,
    pub rewards: RewardSpec,
    pub max_steps_per_episode: u32,
}

impl Default for MazeConfig {
    /// 3x3 grid, start top-left, treasure bottom-left, exit bottom-right,
    /// walls above and to the right of the centre cell.
    fn default() -> Self {
        let wall = |a: [usize; 2], b: [usize; 2]| WallEdge::new(a.into(), b.into()).unwrap();
        Self {
            width: 3,
            height: 3,
            start: GridPos::new(0, 0),
            treasure: GridPos::new(2, 0),
            exit: GridPos::new(2, 2),
            walls: vec![wall([0, 1], [1, 1]), wall([1, 1], [1, 2])],
            rewards: RewardSpec::default(),
            max_steps_per_episode: DEFAULT_MAX_STEPS,
        }
    }
}

impl MazeConfig {
    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn num_states(&self) -> usize {
        2 * self.num_cells()
    }

    pub fn is_wall(&self, from: GridPos, to: GridPos) -> bool {
        self.walls.iter().any(|w| w.blocks(from, to))
    }

    /// Cells reachable from `from` without crossing walls.
    fn reachable(&self, from: GridPos) -> Vec<bool> {
        let mut seen = vec![false; self.num_cells()];
        let mut queue = VecDeque::from([from]);
        seen[from.row * self.width + from.col] = true;
        while let Some(cell) = queue.pop_front() {
            for action in Action::ALL {
                let Some(next) = cell.neighbor(action, self.width, self.height) else {
                    continue;
                };
                let idx = next.row * self.width + next.col;
                if !seen[idx] && !self.is_wall(cell, next) {
                    seen[idx] = true;
                    queue.push_back(next);
                }
            }
        }
        seen
    }
}

/// A single configuration problem found by [`validate_config`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigViolation {
    #[error("grid must have at least one row and one column")]
    EmptyGrid,
    #[error("{what} cell {pos} is out of bounds")]
    OutOfBounds { what: &'static str, pos: GridPos },
    #[error("special cells must be distinct ({0} and {1} share a cell)")]
    SpecialCellsNotDistinct(&'static str, &'static str),
    #[error("wall {0} references an out-of-bounds cell")]
    DanglingWall(WallEdge),
    #[error("wall {0} is listed more than once")]
    DuplicateWall(WallEdge),
    #[error("exit unreachable from {0}")]
    ExitUnreachable(&'static str),
    #[error("reward `{0}` is not finite")]
    NonFiniteReward(&'static str),
    #[error("max_steps_per_episode must be positive")]
    ZeroStepCap,
}

/// Checks every invariant of `config` and reports all violations found.
pub fn validate_config(config: MazeConfig) -> Result<MazeConfig, Vec<ConfigViolation>> {
    let mut errors = Vec::new();
    let (w, h) = (config.width, config.height);
    if w == 0 || h == 0 {
        errors.push(ConfigViolation::EmptyGrid);
    }
    if config.max_steps_per_episode == 0 {
        errors.push(ConfigViolation::ZeroStepCap);
    }
    let r = &config.rewards;
    for (name, value) in [
        ("treasure", r.treasure),
        ("exit", r.exit),
        ("wall", r.wall),
        ("step", r.step),
    ] {
        if !value.is_finite() {
            errors.push(ConfigViolation::NonFiniteReward(name));
        }
    }

    let specials = [
        ("start", config.start),
        ("treasure", config.treasure),
        ("exit", config.exit),
    ];
    let mut specials_ok = true;
    for (what, pos) in specials {
        if !pos.in_bounds(w, h) {
            errors.push(ConfigViolation::OutOfBounds { what, pos });
            specials_ok = false;
        }
    }
    for i in 0..specials.len() {
        for j in i + 1..specials.len() {
            if specials[i].1 == specials[j].1 {
                errors.push(ConfigViolation::SpecialCellsNotDistinct(specials[i].0, specials[j].0));
            }
        }
    }

    let mut walls_ok = true;
    for (i, wall) in config.walls.iter().enumerate() {
        if !wall.a().in_bounds(w, h) || !wall.b().in_bounds(w, h) {
            errors.push(ConfigViolation::DanglingWall(*wall));
            walls_ok = false;
        }
        if config.walls[..i].contains(wall) {
            errors.push(ConfigViolation::DuplicateWall(*wall));
        }
    }

    if specials_ok && walls_ok && w > 0 && h > 0 {
        let exit_idx = config.exit.row * w + config.exit.col;
        for (what, from) in [("start", config.start), ("treasure", config.treasure)] {
            if !config.reachable(from)[exit_idx] {
                errors.push(ConfigViolation::ExitUnreachable(what));
            }
        }
    }

    if errors.is_empty() {
        Ok(config)
    } else {
        Err(errors)
    }
}

/// Dynamic part of the environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub pos: GridPos,
    pub treasure_collected: bool,
    pub steps_taken: u32,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepEvent {
    Step,
    WallHit,
    TreasureFound,
    ExitReached,
    Timeout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next: EnvState,
    pub reward: f64,
    pub event: StepEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MdpError {
    #[error("no actions in terminal state")]
    Terminal,
    #[error("masked action {action} at {pos}")]
    MaskedAction { action: Action, pos: GridPos },
}

pub fn reset(config: &MazeConfig) -> EnvState {
    EnvState {
        pos: config.start,
        treasure_collected: false,
        steps_taken: 0,
        done: false,
    }
}

/// Actions whose target cell lies inside the grid, in encoding order. Walls
/// do not mask anything.
pub fn legal_actions(state: &EnvState, config: &MazeConfig) -> Result<Vec<Action>, MdpError> {
    if state.done {
        return Err(MdpError::Terminal);
    }
    Ok(legal_at(state.pos, config))
}

pub(crate) fn legal_at(pos: GridPos, config: &MazeConfig) -> Vec<Action> {
    Action::ALL
        .into_iter()
        .filter(|a| pos.neighbor(*a, config.width, config.height).is_some())
        .collect()
}

pub fn step(state: &EnvState, action: Action, config: &MazeConfig) -> Result<StepOutcome, MdpError> {
    if state.done {
        return Err(MdpError::Terminal);
    }
    let target = state
        .pos
        .neighbor(action, config.width, config.height)
        .ok_or(MdpError::MaskedAction { action, pos: state.pos })?;

    let mut next = *state;
    next.steps_taken += 1;
    let rewards = &config.rewards;
    let (reward, mut event) = if config.is_wall(state.pos, target) {
        (rewards.wall, StepEvent::WallHit)
    } else {
        next.pos = target;
        if target == config.treasure && !state.treasure_collected {
            next.treasure_collected = true;
            (rewards.treasure, StepEvent::TreasureFound)
        } else if target == config.exit {
            next.done = true;
            (rewards.exit, StepEvent::ExitReached)
        } else {
            (rewards.step, StepEvent::Step)
        }
    };
    if !next.done && next.steps_taken >= config.max_steps_per_episode {
        next.done = true;
        event = StepEvent::Timeout;
    }
    Ok(StepOutcome { next, reward, event })
}

/// Row-major cell index, offset by the cell count once the treasure is held.
pub fn state_index(state: &EnvState, config: &MazeConfig) -> usize {
    cell_state_index(state.pos, state.treasure_collected, config)
}

pub fn cell_state_index(pos: GridPos, treasure_collected: bool, config: &MazeConfig) -> usize {
    let offset = if treasure_collected { config.num_cells() } else { 0 };
    offset + pos.row * config.width + pos.col
}

/// Inverse of [`cell_state_index`]: `(cell, treasure_collected)`.
pub fn state_from_index(index: usize, config: &MazeConfig) -> Option<(GridPos, bool)> {
    if index >= config.num_states() {
        return None;
    }
    let cells = config.num_cells();
    let (flag, cell) = (index >= cells, index % cells);
    Some((GridPos::new(cell / config.width, cell % config.width), flag))
}

/// Whether a state index names an exit cell, where episodes have ended.
pub fn is_terminal_index(index: usize, config: &MazeConfig) -> bool {
    matches!(state_from_index(index, config), Some((pos, _)) if pos == config.exit)
}
