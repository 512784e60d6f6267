//! Treasure-hunt grid world with a tabular Q-learning agent that a human
//! teacher can steer by advising actions and overriding rewards.

pub mod config;
pub mod experiment;
pub mod export;
pub mod format;
pub mod hitl;
pub mod layers;
pub mod mdp;
pub mod oracle;
pub mod qlearn;
pub mod rng;
pub mod session;

pub use format::FormatError;
pub use mdp::{Action, EnvState, GridPos, MazeConfig, RewardSpec, StepEvent, StepOutcome, WallEdge};
pub use qlearn::{ActionSource, EpisodeLog, Hyperparams, QTable, RewardSource, StepRecord, Termination, VisitCounts};
pub use session::{Session, SessionInput, TrainingEvent};
