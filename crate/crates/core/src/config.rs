//! Maze config files.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "width": 3, "height": 3,
//!   "start": [0, 0], "treasure": [2, 0], "exit": [2, 2],
//!   "walls": [[[0, 1], [1, 1]], [[1, 1], [1, 2]]],
//!   "rewards": {"treasure": 20, "exit": 30, "wall": -10, "step": -1},
//!   "max_steps_per_episode": 100,
//!   "hyperparams": {"alpha": 0.05, "gamma": 0.9, "epsilon": 0.3}
//! }
//! ```
//!
//! `rewards`, `max_steps_per_episode` and `hyperparams` are optional. Unknown
//! fields are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::format::{self, FormatError};
use crate::mdp::{validate_config, GridPos, MazeConfig, RewardSpec, WallEdge, DEFAULT_MAX_STEPS};
use crate::qlearn::Hyperparams;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    schema_version: u32,
    width: usize,
    height: usize,
    start: GridPos,
    treasure: GridPos,
    exit: GridPos,
    #[serde(default)]
    walls: Vec<WallEdge>,
    #[serde(default)]
    rewards: RewardSpec,
    #[serde(default = "default_max_steps")]
    max_steps_per_episode: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hyperparams: Option<Hyperparams>,
}

fn default_max_steps() -> u32 {
    DEFAULT_MAX_STEPS
}

/// A validated maze plus the hyperparameters the file asked for, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub maze: MazeConfig,
    pub hyperparams: Option<Hyperparams>,
}

pub fn parse_config(text: &str) -> Result<LoadedConfig, FormatError> {
    let file: ConfigFile = format::parse_versioned(text, "config", CONFIG_SCHEMA_VERSION)?;
    let maze = MazeConfig {
        width: file.width,
        height: file.height,
        start: file.start,
        treasure: file.treasure,
        exit: file.exit,
        walls: file.walls,
        rewards: file.rewards,
        max_steps_per_episode: file.max_steps_per_episode,
    };
    let maze = validate_config(maze).map_err(FormatError::InvalidConfig)?;
    Ok(LoadedConfig {
        maze,
        hyperparams: file.hyperparams,
    })
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, FormatError> {
    parse_config(&format::read_text(path)?)
}

pub fn config_to_json(maze: &MazeConfig, hyperparams: Option<Hyperparams>) -> String {
    format::to_canonical_json(&ConfigFile {
        schema_version: CONFIG_SCHEMA_VERSION,
        width: maze.width,
        height: maze.height,
        start: maze.start,
        treasure: maze.treasure,
        exit: maze.exit,
        walls: maze.walls.clone(),
        rewards: maze.rewards,
        max_steps_per_episode: maze.max_steps_per_episode,
        hyperparams,
    })
}
