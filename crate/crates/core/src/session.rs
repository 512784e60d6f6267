//! A training session: the step loop plus run control, a sequenced event
//! feed and persistence.
//!
//! Everything that changes a session goes through [`Session::apply`], so a
//! seed, a config and the ordered list of inputs determine every record and
//! event the session produces.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{self, FormatError};
use crate::hitl::{AwaitingKind, HitlError, LoopEvent, LoopStatus, RewardInput, StepPhase, TrainingLoop, TrainingMode};
use crate::mdp::{validate_config, Action, MazeConfig};
use crate::qlearn::{Hyperparams, Termination};

pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_STEP_INTERVAL_MS: u64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    Start,
    Pause,
    Step,
    Reset,
}

/// Why the loop is waiting for the outside world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputKind {
    Advice,
    Reward,
    BridgeDown,
}

impl From<AwaitingKind> for InputKind {
    fn from(k: AwaitingKind) -> Self {
        match k {
            AwaitingKind::Advice => InputKind::Advice,
            AwaitingKind::Reward => InputKind::Reward,
        }
    }
}

/// One input to a session, in the order it was applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SessionInput {
    Control(Control),
    SetMode(TrainingMode),
    SetEpsilon(f64),
    Advice(Action),
    Reward(RewardInput),
    /// Run the current phase (the pacing timer of a running session).
    Tick,
    /// The robot bridge did not answer in time.
    BridgeDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    PhaseChanged {
        phase: StepPhase,
    },
    StepCompleted {
        episode: u64,
        record: crate::qlearn::StepRecord,
        score: f64,
    },
    EpisodeCompleted {
        episode: u64,
        score: f64,
        steps: usize,
        found_treasure: bool,
        terminated_by: Termination,
        aborted: bool,
    },
    QCellUpdated {
        state: usize,
        action: Action,
        old: f64,
        new: f64,
    },
    ModeChanged {
        mode: TrainingMode,
    },
    EpsilonChanged {
        epsilon: f64,
    },
    AwaitingInput {
        input: InputKind,
    },
}

impl From<LoopEvent> for EventKind {
    fn from(e: LoopEvent) -> Self {
        match e {
            LoopEvent::PhaseChanged { phase } => EventKind::PhaseChanged { phase },
            LoopEvent::QCellUpdated {
                state,
                action,
                old,
                new,
            } => EventKind::QCellUpdated {
                state,
                action,
                old,
                new,
            },
            LoopEvent::StepCompleted { episode, record, score } => EventKind::StepCompleted { episode, record, score },
            LoopEvent::EpisodeCompleted {
                episode,
                score,
                steps,
                found_treasure,
                terminated_by,
                aborted,
            } => EventKind::EpisodeCompleted {
                episode,
                score,
                steps,
                found_treasure,
                terminated_by,
                aborted,
            },
            LoopEvent::AwaitingInput { kind } => EventKind::AwaitingInput { input: kind.into() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub event: EventKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("pause first")]
    Running,
    #[error("epsilon {0} outside [0, 1]")]
    Epsilon(f64),
    #[error(transparent)]
    Loop(#[from] HitlError),
}

/// Status as reported to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    #[serde(flatten)]
    pub status: LoopStatus,
    pub running: bool,
    pub epsilon: f64,
    pub legal_actions: Vec<Action>,
    pub treasure_collected: bool,
    pub completed_episodes: usize,
    pub next_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    seed: u64,
    running: bool,
    step_interval_ms: u64,
    next_seq: u64,
    #[serde(rename = "loop")]
    training: TrainingLoop,
}

impl Session {
    pub fn new(config: MazeConfig, hyperparams: Hyperparams, seed: u64) -> Self {
        Self {
            seed,
            running: false,
            step_interval_ms: DEFAULT_STEP_INTERVAL_MS,
            next_seq: 0,
            training: TrainingLoop::new(config, hyperparams, seed),
        }
    }

    pub fn with_step_interval(mut self, ms: u64) -> Self {
        self.step_interval_ms = ms;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    pub fn step_interval_ms(&self) -> u64 {
        self.step_interval_ms
    }

    pub fn training(&self) -> &TrainingLoop {
        &self.training
    }

    pub fn config(&self) -> &MazeConfig {
        self.training.config()
    }

    pub fn status(&self) -> SessionStatus {
        let env = self.training.env();
        SessionStatus {
            status: self.training.status(),
            running: self.running,
            epsilon: self.training.hyperparams().epsilon(),
            legal_actions: crate::mdp::legal_actions(env, self.config()).unwrap_or_default(),
            treasure_collected: env.treasure_collected,
            completed_episodes: self.training.completed_episodes().len(),
            next_seq: self.next_seq,
        }
    }

    /// The action the loop will execute next, while in `ExecuteAction`. The
    /// server sends it to the robot before ticking.
    pub fn pending_move(&self) -> Option<Action> {
        self.training.pending_action()
    }

    fn stamp(&mut self, kinds: impl IntoIterator<Item = EventKind>) -> Vec<TrainingEvent> {
        kinds
            .into_iter()
            .map(|event| {
                let seq = self.next_seq;
                self.next_seq += 1;
                TrainingEvent { seq, event }
            })
            .collect()
    }

    pub fn apply(&mut self, input: SessionInput) -> Result<Vec<TrainingEvent>, SessionError> {
        let kinds: Vec<EventKind> = match input {
            SessionInput::Control(Control::Start) => {
                self.running = true;
                Vec::new()
            }
            SessionInput::Control(Control::Pause) => {
                self.running = false;
                Vec::new()
            }
            SessionInput::Control(Control::Step) => {
                if self.running {
                    return Err(SessionError::Running);
                }
                let (events, _) = self.training.run_step()?;
                events.into_iter().map(Into::into).collect()
            }
            SessionInput::Control(Control::Reset) => {
                self.training.restart_episode().into_iter().map(Into::into).collect()
            }
            SessionInput::Tick => match self.training.advance()? {
                crate::hitl::Advance::Ran(events) => events.into_iter().map(Into::into).collect(),
                crate::hitl::Advance::Parked(_) => Vec::new(),
            },
            SessionInput::SetMode(mode) => {
                if !self.training.set_mode(mode) {
                    Vec::new()
                } else {
                    let mut kinds = vec![EventKind::ModeChanged { mode }];
                    if let Some(kind) = self.training.awaiting() {
                        kinds.push(EventKind::AwaitingInput { input: kind.into() });
                    }
                    kinds
                }
            }
            SessionInput::SetEpsilon(epsilon) => {
                self.training
                    .set_epsilon(epsilon)
                    .map_err(|_| SessionError::Epsilon(epsilon))?;
                vec![EventKind::EpsilonChanged { epsilon }]
            }
            SessionInput::Advice(action) => {
                self.training.submit_advice(action)?;
                Vec::new()
            }
            SessionInput::Reward(input) => {
                self.training.submit_reward(input)?;
                Vec::new()
            }
            SessionInput::BridgeDown => {
                self.running = false;
                vec![EventKind::AwaitingInput {
                    input: InputKind::BridgeDown,
                }]
            }
        };
        Ok(self.stamp(kinds))
    }

    pub fn to_snapshot_json(&self) -> String {
        format::to_canonical_json(&SnapshotRef {
            schema_version: SNAPSHOT_SCHEMA_VERSION,
            seed: self.seed,
            status: self.training.status(),
            session: self,
        })
    }

    pub fn from_snapshot_json(text: &str) -> Result<Self, FormatError> {
        let snap: SnapshotOwned = format::parse_versioned(text, "snapshot", SNAPSHOT_SCHEMA_VERSION)?;
        let session = snap.session;
        validate_config(session.config().clone()).map_err(FormatError::InvalidConfig)?;
        let cfg = session.config();
        let t = &session.training;
        if t.q().num_states() != cfg.num_states() || t.visits().num_states() != cfg.num_states() {
            return Err(FormatError::Inconsistent(
                "table dimensions do not match the maze".into(),
            ));
        }
        if snap.seed != session.seed || t.rng().seed() != session.seed {
            return Err(FormatError::Inconsistent("seed fields disagree".into()));
        }
        if snap.status != t.status() {
            return Err(FormatError::Inconsistent("status does not match loop state".into()));
        }
        Ok(session)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        format::write_text(path, &self.to_snapshot_json())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_snapshot_json(&format::read_text(path)?)
    }
}

#[derive(Serialize)]
struct SnapshotRef<'a> {
    schema_version: u32,
    seed: u64,
    status: LoopStatus,
    session: &'a Session,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotOwned {
    #[allow(dead_code)]
    schema_version: u32,
    seed: u64,
    status: LoopStatus,
    session: Session,
}
