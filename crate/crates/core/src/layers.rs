//! Payloads behind the three grid overlays: action values, visit counts and
//! the last trajectory.

use serde::{Deserialize, Serialize};

use crate::mdp::{self, Action, GridPos, MazeConfig, StepEvent};
use crate::qlearn::{EpisodeLog, QTable, VisitCounts};

/// Which overlays a client shows, and which half of the state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VisualizationLayers {
    pub learning_experience: bool,
    pub visited_counts: bool,
    pub past_trajectory: bool,
    pub treasure_flag_slice: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellValues {
    pub cell: GridPos,
    /// Indexed by action encoding; `None` for masked actions.
    pub values: [Option<f64>; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QLayer {
    pub treasure_flag_slice: bool,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<CellValues>,
    /// Range over every available entry of the table, both slices.
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCounts {
    pub cell: GridPos,
    pub counts: [Option<u64>; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitLayer {
    pub treasure_flag_slice: bool,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<CellCounts>,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub cell: GridPos,
    pub treasure_collected: bool,
    pub action: Action,
    pub reward: f64,
    pub event: StepEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLayer {
    pub available: bool,
    pub episode: Option<u64>,
    pub score: Option<f64>,
    pub steps: Vec<TrajectoryStep>,
}

fn slice_cells(config: &MazeConfig) -> impl Iterator<Item = GridPos> + '_ {
    (0..config.height).flat_map(move |row| (0..config.width).map(move |col| GridPos::new(row, col)))
}

pub fn q_layer(q: &QTable, config: &MazeConfig, slice: bool) -> QLayer {
    let cells = slice_cells(config)
        .map(|cell| {
            let s = mdp::cell_state_index(cell, slice, config);
            let values = Action::ALL.map(|a| q.is_legal(s, a.index()).then(|| q.get(s, a.index())));
            CellValues { cell, values }
        })
        .collect();
    let (min, max) = q.legal_range();
    QLayer {
        treasure_flag_slice: slice,
        width: config.width,
        height: config.height,
        cells,
        min,
        max,
    }
}

pub fn visit_layer(visits: &VisitCounts, q: &QTable, config: &MazeConfig, slice: bool) -> VisitLayer {
    let cells = slice_cells(config)
        .map(|cell| {
            let s = mdp::cell_state_index(cell, slice, config);
            let counts = Action::ALL.map(|a| q.is_legal(s, a.index()).then(|| visits.get(s, a.index())));
            CellCounts { cell, counts }
        })
        .collect();
    VisitLayer {
        treasure_flag_slice: slice,
        width: config.width,
        height: config.height,
        cells,
        total: visits.total(),
    }
}

/// The most recent episode that ended on its own (not by a reset).
pub fn trajectory_layer(episodes: &[EpisodeLog], config: &MazeConfig) -> TrajectoryLayer {
    let Some(log) = episodes.iter().rev().find(|e| !e.aborted) else {
        return TrajectoryLayer {
            available: false,
            episode: None,
            score: None,
            steps: Vec::new(),
        };
    };
    let steps = log
        .records
        .iter()
        .map(|r| {
            let (cell, treasure_collected) = mdp::state_from_index(r.s, config).expect("record state in range");
            TrajectoryStep {
                cell,
                treasure_collected,
                action: r.a,
                reward: r.r,
                event: r.event,
            }
        })
        .collect();
    TrajectoryLayer {
        available: true,
        episode: Some(log.episode_index),
        score: Some(log.score),
        steps,
    }
}
