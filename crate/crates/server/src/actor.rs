//! The task that owns one session.
//!
//! All mutation goes through the command queue, so inputs are applied one at
//! a time and every read sees a single step boundary. While running, the
//! task ticks the loop every `step_interval_ms` and sends each chosen move to
//! the robot before the environment executes it.

use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::time::Instant;
use treasure_bridge::{BridgeClient, BridgeCommand, Cardinal, ReplyStatus};
use treasure_core::hitl::StepPhase;
use treasure_core::session::{Control, SessionError, SessionStatus};
use treasure_core::{mdp, FormatError, Session, SessionInput, TrainingEvent};

/// Events a subscriber may fall behind by before it is dropped.
pub const EVENT_BUFFER: usize = 1024;
const COMMAND_QUEUE: usize = 64;

#[derive(Debug, Error)]
pub enum ActorError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("session has shut down")]
    Closed,
}

type Reader = Box<dyn FnOnce(&Session) + Send>;

enum Command {
    Input(SessionInput, oneshot::Sender<Result<SessionStatus, SessionError>>),
    Read(Reader),
    Save(PathBuf, oneshot::Sender<Result<(), FormatError>>),
}

/// Cheap, cloneable access to a running session.
#[derive(Clone)]
pub struct SessionHandle {
    commands: mpsc::Sender<Command>,
    events: broadcast::Sender<TrainingEvent>,
}

impl SessionHandle {
    pub fn spawn(session: Session, bridge: Option<BridgeClient>) -> Self {
        Self::spawn_with_buffer(session, bridge, EVENT_BUFFER)
    }

    pub fn spawn_with_buffer(session: Session, bridge: Option<BridgeClient>, buffer: usize) -> Self {
        let (commands, rx) = mpsc::channel(COMMAND_QUEUE);
        let (events, _) = broadcast::channel(buffer);
        let actor = Actor {
            session,
            bridge,
            events: events.clone(),
            resync: true,
            next_tick: Instant::now(),
        };
        tokio::spawn(actor.run(rx));
        Self { commands, events }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<TrainingEvent> {
        self.events.subscribe()
    }

    pub async fn input(&self, input: SessionInput) -> Result<SessionStatus, ActorError> {
        let (tx, rx) = oneshot::channel();
        self.send(Command::Input(input, tx)).await?;
        Ok(rx.await.map_err(|_| ActorError::Closed)??)
    }

    /// Runs `f` against the session between two inputs and returns its
    /// result.
    pub async fn read<T, F>(&self, f: F) -> Result<T, ActorError>
    where
        T: Send + 'static,
        F: FnOnce(&Session) -> T + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        let reader: Reader = Box::new(move |s| {
            let _ = tx.send(f(s));
        });
        self.send(Command::Read(reader)).await?;
        rx.await.map_err(|_| ActorError::Closed)
    }

    pub async fn save(&self, path: PathBuf) -> Result<(), ActorError> {
        let (tx, rx) = oneshot::channel();
        self.send(Command::Save(path, tx)).await?;
        Ok(rx.await.map_err(|_| ActorError::Closed)??)
    }

    async fn send(&self, cmd: Command) -> Result<(), ActorError> {
        self.commands.send(cmd).await.map_err(|_| ActorError::Closed)
    }
}

struct Actor {
    session: Session,
    bridge: Option<BridgeClient>,
    events: broadcast::Sender<TrainingEvent>,
    /// The robot's pose is unknown and must be reset before the next move.
    resync: bool,
    next_tick: Instant,
}

impl Actor {
    async fn run(mut self, mut commands: mpsc::Receiver<Command>) {
        loop {
            let ticking = self.session.is_running() && self.session.training().awaiting().is_none();
            tokio::select! {
                biased;
                cmd = commands.recv() => match cmd {
                    Some(cmd) => self.handle(cmd).await,
                    None => break,
                },
                _ = tokio::time::sleep_until(self.next_tick), if ticking => {
                    self.tick().await;
                    self.next_tick = Instant::now() + Duration::from_millis(self.session.step_interval_ms());
                    if self.session.step_interval_ms() == 0 {
                        tokio::task::yield_now().await;
                    }
                }
            }
        }
    }

    async fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Input(input, reply) => {
                let result = self.input(input).await.map(|()| self.session.status());
                let _ = reply.send(result);
            }
            Command::Read(reader) => reader(&self.session),
            Command::Save(path, reply) => {
                let _ = reply.send(self.session.save(&path));
            }
        }
    }

    async fn input(&mut self, input: SessionInput) -> Result<(), SessionError> {
        match input {
            SessionInput::Control(Control::Step) => {
                if self.session.is_running() {
                    return Err(SessionError::Running);
                }
                // one full cycle, or less if the loop parks
                loop {
                    let was = self.session.training().phase();
                    if !self.tick().await {
                        return Ok(());
                    }
                    if was == StepPhase::UpdateQ {
                        return Ok(());
                    }
                }
            }
            SessionInput::Control(Control::Start) => {
                self.apply(input)?;
                self.next_tick = Instant::now();
                Ok(())
            }
            SessionInput::Control(Control::Reset) => {
                self.apply(input)?;
                self.resync = true;
                Ok(())
            }
            other => self.apply(other),
        }
    }

    fn apply(&mut self, input: SessionInput) -> Result<(), SessionError> {
        let events = self.session.apply(input)?;
        for event in events {
            // no subscribers is fine
            let _ = self.events.send(event);
        }
        Ok(())
    }

    /// Runs one phase. Returns false if nothing ran: the loop is parked, the
    /// bridge is down or the loop failed.
    async fn tick(&mut self) -> bool {
        if !self.dispatch().await {
            return false;
        }
        let before = self.session.status().next_seq;
        if let Err(e) = self.apply(SessionInput::Tick) {
            tracing::error!(error = %e, "training loop failed; pausing");
            let _ = self.apply(SessionInput::Control(Control::Pause));
            return false;
        }
        self.session.status().next_seq != before
    }

    /// Mirrors the pending move on the robot. Returns false, after pausing
    /// the session, if the robot could not be reached.
    async fn dispatch(&mut self) -> bool {
        let (Some(client), Some(action)) = (&self.bridge, self.session.pending_move()) else {
            return true;
        };
        let env = *self.session.training().env();
        let config = self.session.config();
        let expected = mdp::step(&env, action, config).map(|o| o.next.pos).ok();
        let mut commands = Vec::with_capacity(2);
        if self.resync || env.steps_taken == 0 {
            commands.push(BridgeCommand::Reset {
                cell: env.pos,
                heading: Cardinal::South,
            });
        }
        commands.push(BridgeCommand::Move(action));
        for cmd in &commands {
            match client.send(cmd).await {
                Ok(reply) if reply.status == ReplyStatus::Ok => {
                    if let (BridgeCommand::Move(_), Some(pos)) = (cmd, expected) {
                        if (reply.pose.row, reply.pose.col) != (pos.row, pos.col) {
                            tracing::warn!(?pos, pose = ?reply.pose, "robot and environment disagree");
                            self.resync = true;
                            return true;
                        }
                    }
                }
                Ok(reply) => {
                    tracing::warn!(command = %cmd, message = %reply.message, "robot refused command");
                    return self.bridge_down();
                }
                Err(e) => {
                    tracing::warn!(command = %cmd, error = %e, "robot unreachable");
                    return self.bridge_down();
                }
            }
        }
        self.resync = false;
        true
    }

    fn bridge_down(&mut self) -> bool {
        self.resync = true;
        let _ = self.apply(SessionInput::BridgeDown);
        false
    }
}
