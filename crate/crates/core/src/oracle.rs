//! Value iteration over the maze, used as the reference the learner is
//! checked against. It shares the environment dynamics with the learner but
//! none of the update code.

use std::collections::VecDeque;

use thiserror::Error;

use crate::mdp::{self, Action, EnvState, GridPos, MazeConfig, StepOutcome};
use crate::qlearn::QTable;

pub const MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("gamma must lie in [0, 1), got {0}")]
    Gamma(f64),
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("value iteration did not converge after {sweeps} sweeps (last change {delta})")]
    NoConvergence { sweeps: usize, delta: f64 },
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub q: QTable,
    pub sweeps: usize,
    /// Largest absolute change of each sweep.
    pub deltas: Vec<f64>,
}

/// Deterministic transition used by the oracle: ignores the episode step cap
/// so values describe the undiscounted-horizon maze.
fn transition(config: &MazeConfig, pos: GridPos, flag: bool, action: Action) -> StepOutcome {
    let state = EnvState {
        pos,
        treasure_collected: flag,
        steps_taken: 0,
        done: false,
    };
    let uncapped = MazeConfig {
        max_steps_per_episode: u32::MAX,
        ..config.clone()
    };
    mdp::step(&state, action, &uncapped).expect("oracle only steps legal actions")
}

struct Model {
    // per state: (action, reward, next state, terminal) for each legal action
    edges: Vec<Vec<(Action, f64, usize, bool)>>,
}

impl Model {
    fn build(config: &MazeConfig) -> Self {
        let edges = (0..config.num_states())
            .map(|s| {
                let (pos, flag) = mdp::state_from_index(s, config).expect("index in range");
                if pos == config.exit {
                    return Vec::new();
                }
                mdp::legal_at(pos, config)
                    .into_iter()
                    .map(|a| {
                        let out = transition(config, pos, flag, a);
                        (a, out.reward, mdp::state_index(&out.next, config), out.next.done)
                    })
                    .collect()
            })
            .collect();
        Self { edges }
    }

    fn backup(&self, values: &[Vec<f64>], s: usize, k: usize, gamma: f64) -> f64 {
        let (_, reward, next, terminal) = self.edges[s][k];
        let continuation = if terminal {
            0.0
        } else {
            values[next].iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        reward + gamma * continuation
    }
}

/// Iterates the Bellman optimality backup to a fixed point. Terminal (exit)
/// states and masked actions keep a value of zero.
pub fn value_iteration(config: &MazeConfig, gamma: f64, tol: f64) -> Result<OracleSolution, OracleError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(OracleError::Gamma(gamma));
    }
    // also rejects NaN
    if tol.is_nan() || tol <= 0.0 {
        return Err(OracleError::Tolerance(tol));
    }
    let model = Model::build(config);
    let mut values: Vec<Vec<f64>> = model.edges.iter().map(|e| vec![0.0; e.len()]).collect();
    let mut deltas = Vec::new();
    for sweep in 1..=MAX_SWEEPS {
        let next: Vec<Vec<f64>> = (0..values.len())
            .map(|s| {
                (0..model.edges[s].len())
                    .map(|k| model.backup(&values, s, k, gamma))
                    .collect()
            })
            .collect();
        let delta = values
            .iter()
            .flatten()
            .zip(next.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        deltas.push(delta);
        if delta < tol {
            let mut q = QTable::for_maze(config);
            for (s, row) in values.iter().enumerate() {
                for (k, v) in row.iter().enumerate() {
                    q.set(s, model.edges[s][k].0.index(), *v);
                }
            }
            return Ok(OracleSolution {
                q,
                sweeps: sweep,
                deltas,
            });
        }
    }
    Err(OracleError::NoConvergence {
        sweeps: MAX_SWEEPS,
        delta: deltas.last().copied().unwrap_or(f64::NAN),
    })
}

/// Largest |Q(s,a) - (R + γ max Q(s',·))| over all available pairs.
pub fn bellman_residual(q: &QTable, config: &MazeConfig, gamma: f64) -> f64 {
    let model = Model::build(config);
    let values: Vec<Vec<f64>> = model
        .edges
        .iter()
        .enumerate()
        .map(|(s, e)| e.iter().map(|(a, ..)| q.get(s, a.index())).collect())
        .collect();
    (0..values.len())
        .flat_map(|s| (0..values[s].len()).map(move |k| (s, k)))
        .map(|(s, k)| (values[s][k] - model.backup(&values, s, k, gamma)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub s: usize,
    pub action: Action,
    pub outcome: StepOutcome,
}

/// Follows the deterministic greedy policy of `q` from the start cell until
/// the episode ends.
pub fn greedy_trace(q: &QTable, config: &MazeConfig) -> Vec<TraceStep> {
    let mut state = mdp::reset(config);
    let mut trace = Vec::new();
    while !state.done {
        let s = mdp::state_index(&state, config);
        let action = crate::qlearn::greedy_action(q, s).expect("non-terminal states have actions");
        let outcome = mdp::step(&state, action, config).expect("greedy actions are legal");
        trace.push(TraceStep { s, action, outcome });
        state = outcome.next;
    }
    trace
}

/// Length of the shortest wall-respecting walk from the start that picks up
/// the treasure and then reaches the exit, by breadth-first search over
/// (cell, treasure flag).
pub fn bfs_treasure_path_len(config: &MazeConfig) -> Option<usize> {
    let n = config.num_states();
    let mut dist = vec![usize::MAX; n];
    let start = mdp::cell_state_index(config.start, false, config);
    dist[start] = 0;
    let mut queue = VecDeque::from([(config.start, false)]);
    while let Some((pos, flag)) = queue.pop_front() {
        let d = dist[mdp::cell_state_index(pos, flag, config)];
        if pos == config.exit {
            if flag {
                return Some(d);
            }
            continue;
        }
        for a in Action::ALL {
            let Some(next) = pos.neighbor(a, config.width, config.height) else {
                continue;
            };
            if config.is_wall(pos, next) {
                continue;
            }
            let next_flag = flag || next == config.treasure;
            let idx = mdp::cell_state_index(next, next_flag, config);
            if dist[idx] == usize::MAX {
                dist[idx] = d + 1;
                queue.push_back((next, next_flag));
            }
        }
    }
    None
}
