//! Hosts training sessions behind an HTTP API.
//!
//! Each session runs in its own task, which owns the training state and the
//! robot bridge client. Requests reach it through a command queue and its
//! events fan out to any number of stream subscribers.

pub mod actor;
pub mod api;
pub mod settings;

pub use actor::{ActorError, SessionHandle};
pub use api::{bind, router, AppState};
pub use settings::ServerSettings;
