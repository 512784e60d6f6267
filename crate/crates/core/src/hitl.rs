//! The five-phase training loop a human can step into.
//!
//! Every environment step runs as
//! `ObserveState -> ChooseAction -> ExecuteAction -> ReceiveReward -> UpdateQ`.
//! In [`TrainingMode::Auto`] the phases run back to back. In
//! [`TrainingMode::Manual`] the loop parks at `ChooseAction` until the human
//! advises a direction and at `ReceiveReward` until they override (or
//! confirm) the reward. Inputs sit in single-slot mailboxes, latest wins, and
//! are consumed when the phase runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{self, Action, EnvState, MazeConfig, StepOutcome};
use crate::qlearn::{
    self, close_episode, ActionSource, EpisodeLog, Hyperparams, QError, QTable, RewardSource, StepRecord, VisitCounts,
};
use crate::rng::SeededRng;

/// Bounds of a human reward override.
pub const OVERRIDE_MIN: f64 = -30.0;
pub const OVERRIDE_MAX: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainingMode {
    Auto,
    Manual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StepPhase {
    ObserveState,
    ChooseAction,
    ExecuteAction,
    ReceiveReward,
    UpdateQ,
}

impl StepPhase {
    pub const CYCLE: [StepPhase; 5] = [
        StepPhase::ObserveState,
        StepPhase::ChooseAction,
        StepPhase::ExecuteAction,
        StepPhase::ReceiveReward,
        StepPhase::UpdateQ,
    ];

    pub fn next(self) -> StepPhase {
        match self {
            StepPhase::ObserveState => StepPhase::ChooseAction,
            StepPhase::ChooseAction => StepPhase::ExecuteAction,
            StepPhase::ExecuteAction => StepPhase::ReceiveReward,
            StepPhase::ReceiveReward => StepPhase::UpdateQ,
            StepPhase::UpdateQ => StepPhase::ObserveState,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AwaitingKind {
    Advice,
    Reward,
}

/// A human reward in `[-30, 30]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RewardOverride(f64);

impl RewardOverride {
    pub fn new(value: f64) -> Result<Self, HitlError> {
        if (OVERRIDE_MIN..=OVERRIDE_MAX).contains(&value) {
            Ok(Self(value))
        } else {
            Err(HitlError::OverrideRange(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for RewardOverride {
    type Error = HitlError;

    fn try_from(value: f64) -> Result<Self, HitlError> {
        Self::new(value)
    }
}

impl From<RewardOverride> for f64 {
    fn from(r: RewardOverride) -> f64 {
        r.0
    }
}

/// What the human said about the last step's reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RewardInput {
    Override(RewardOverride),
    /// Keep the automatic reward.
    Confirm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopStatus {
    pub mode: TrainingMode,
    pub phase: StepPhase,
    pub current_state: usize,
    pub last_action: Option<Action>,
    pub last_reward: Option<f64>,
    pub episode: u64,
    pub score: f64,
    pub awaiting: Option<AwaitingKind>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HitlError {
    #[error("not awaiting advice")]
    NotAwaitingAdvice,
    #[error("not awaiting reward")]
    NotAwaitingReward,
    #[error("action is masked here")]
    MaskedAdvice,
    #[error("reward override {0} outside [-30, 30]")]
    OverrideRange(f64),
    #[error(transparent)]
    Learning(#[from] QError),
}

/// Something that happened while a phase ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LoopEvent {
    PhaseChanged {
        phase: StepPhase,
    },
    QCellUpdated {
        state: usize,
        action: Action,
        old: f64,
        new: f64,
    },
    StepCompleted {
        episode: u64,
        record: StepRecord,
        score: f64,
    },
    EpisodeCompleted {
        episode: u64,
        score: f64,
        steps: usize,
        found_treasure: bool,
        terminated_by: qlearn::Termination,
        aborted: bool,
    },
    AwaitingInput {
        kind: AwaitingKind,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Advance {
    /// The current phase ran; the loop now sits at the next one.
    Ran(Vec<LoopEvent>),
    /// Manual mode is waiting for this input; nothing changed.
    Parked(AwaitingKind),
}

/// The step in flight between `ChooseAction` and `UpdateQ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct InFlight {
    s: usize,
    action: Action,
    action_source: ActionSource,
    outcome: Option<StepOutcome>,
    reward: Option<(f64, RewardSource)>,
}

/// Owns the learner and runs its step loop one phase at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLoop {
    config: MazeConfig,
    hyperparams: Hyperparams,
    q: QTable,
    visits: VisitCounts,
    rng: SeededRng,
    mode: TrainingMode,
    phase: StepPhase,
    env: EnvState,
    observed: usize,
    in_flight: Option<InFlight>,
    advice_slot: Option<Action>,
    reward_slot: Option<RewardInput>,
    episode: u64,
    score: f64,
    records: Vec<StepRecord>,
    last_action: Option<Action>,
    last_reward: Option<f64>,
    completed: Vec<EpisodeLog>,
}

impl TrainingLoop {
    pub fn new(config: MazeConfig, hyperparams: Hyperparams, seed: u64) -> Self {
        let env = mdp::reset(&config);
        Self {
            q: QTable::for_maze(&config),
            visits: VisitCounts::for_maze(&config),
            rng: SeededRng::new(seed),
            observed: mdp::state_index(&env, &config),
            env,
            config,
            hyperparams,
            mode: TrainingMode::Auto,
            phase: StepPhase::ObserveState,
            in_flight: None,
            advice_slot: None,
            reward_slot: None,
            episode: 0,
            score: 0.0,
            records: Vec::new(),
            last_action: None,
            last_reward: None,
            completed: Vec::new(),
        }
    }

    pub fn config(&self) -> &MazeConfig {
        &self.config
    }

    pub fn hyperparams(&self) -> Hyperparams {
        self.hyperparams
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    pub fn visits(&self) -> &VisitCounts {
        &self.visits
    }

    pub fn rng(&self) -> &SeededRng {
        &self.rng
    }

    pub fn env(&self) -> &EnvState {
        &self.env
    }

    pub fn mode(&self) -> TrainingMode {
        self.mode
    }

    pub fn phase(&self) -> StepPhase {
        self.phase
    }

    pub fn completed_episodes(&self) -> &[EpisodeLog] {
        &self.completed
    }

    /// Records of the episode in progress.
    pub fn current_records(&self) -> &[StepRecord] {
        &self.records
    }

    /// The action about to be executed, once one has been chosen.
    pub fn pending_action(&self) -> Option<Action> {
        match (self.phase, self.in_flight) {
            (StepPhase::ExecuteAction, Some(f)) => Some(f.action),
            _ => None,
        }
    }

    /// The input the loop needs before it can run the current phase. Once
    /// the input has been submitted the loop is no longer waiting.
    pub fn awaiting(&self) -> Option<AwaitingKind> {
        match (self.mode, self.phase) {
            (TrainingMode::Manual, StepPhase::ChooseAction) if self.advice_slot.is_none() => Some(AwaitingKind::Advice),
            (TrainingMode::Manual, StepPhase::ReceiveReward) if self.reward_slot.is_none() => {
                Some(AwaitingKind::Reward)
            }
            _ => None,
        }
    }

    pub fn status(&self) -> LoopStatus {
        LoopStatus {
            mode: self.mode,
            phase: self.phase,
            current_state: self.observed,
            last_action: self.last_action,
            last_reward: self.last_reward,
            episode: self.episode,
            score: self.score,
            awaiting: self.awaiting(),
        }
    }

    /// Switches mode. Calls happen between phases, so the change applies at
    /// the boundary the loop is parked on. Leaving manual mode drops any
    /// unconsumed input. Returns whether anything changed.
    pub fn set_mode(&mut self, mode: TrainingMode) -> bool {
        if self.mode == mode {
            return false;
        }
        self.mode = mode;
        if mode == TrainingMode::Auto {
            self.advice_slot = None;
            self.reward_slot = None;
        }
        true
    }

    pub fn set_epsilon(&mut self, epsilon: f64) -> Result<(), HitlError> {
        self.hyperparams = self.hyperparams.with_epsilon(epsilon)?;
        Ok(())
    }

    pub fn submit_advice(&mut self, action: Action) -> Result<(), HitlError> {
        if self.awaiting() != Some(AwaitingKind::Advice) {
            return Err(HitlError::NotAwaitingAdvice);
        }
        if self
            .env
            .pos
            .neighbor(action, self.config.width, self.config.height)
            .is_none()
        {
            return Err(HitlError::MaskedAdvice);
        }
        self.advice_slot = Some(action);
        Ok(())
    }

    pub fn submit_reward(&mut self, input: RewardInput) -> Result<(), HitlError> {
        if self.awaiting() != Some(AwaitingKind::Reward) {
            return Err(HitlError::NotAwaitingReward);
        }
        self.reward_slot = Some(input);
        Ok(())
    }

    /// Runs the current phase.
    pub fn advance(&mut self) -> Result<Advance, HitlError> {
        let mut events = Vec::new();
        match self.phase {
            StepPhase::ObserveState => {
                self.observed = mdp::state_index(&self.env, &self.config);
            }
            StepPhase::ChooseAction => {
                let s = self.observed;
                let legal = mdp::legal_actions(&self.env, &self.config).map_err(QError::from)?;
                let (action, action_source) = match self.mode {
                    TrainingMode::Manual => match self.advice_slot.take() {
                        Some(a) => (a, ActionSource::Advised),
                        None => return Ok(Advance::Parked(AwaitingKind::Advice)),
                    },
                    TrainingMode::Auto => {
                        qlearn::select_action(&self.q, s, &legal, self.hyperparams.epsilon(), &mut self.rng)?
                    }
                };
                self.last_action = Some(action);
                self.in_flight = Some(InFlight {
                    s,
                    action,
                    action_source,
                    outcome: None,
                    reward: None,
                });
            }
            StepPhase::ExecuteAction => {
                let flight = self.in_flight.as_mut().expect("action chosen before execution");
                let outcome = mdp::step(&self.env, flight.action, &self.config).map_err(QError::from)?;
                flight.outcome = Some(outcome);
                self.env = outcome.next;
            }
            StepPhase::ReceiveReward => {
                let flight = self.in_flight.as_mut().expect("step executed before reward");
                let automatic = flight.outcome.expect("outcome present").reward;
                let reward = match self.mode {
                    TrainingMode::Auto => (automatic, RewardSource::Automatic),
                    TrainingMode::Manual => match self.reward_slot.take() {
                        Some(RewardInput::Override(r)) => (r.value(), RewardSource::HumanOverride),
                        Some(RewardInput::Confirm) => (automatic, RewardSource::Automatic),
                        None => return Ok(Advance::Parked(AwaitingKind::Reward)),
                    },
                };
                flight.reward = Some(reward);
                self.last_reward = Some(reward.0);
                self.score += reward.0;
            }
            StepPhase::UpdateQ => {
                let flight = self.in_flight.take().expect("reward received before update");
                let outcome = flight.outcome.expect("outcome present");
                let (r, reward_source) = flight.reward.expect("reward present");
                let record = StepRecord {
                    s: flight.s,
                    a: flight.action,
                    r,
                    s_next: mdp::state_index(&outcome.next, &self.config),
                    done: outcome.next.done,
                    event: outcome.event,
                    reward_source,
                    action_source: flight.action_source,
                };
                let old = self.q.get(record.s, record.a.index());
                let new = qlearn::q_update(&mut self.q, &record, self.hyperparams.alpha(), self.hyperparams.gamma())?;
                self.visits.increment(record.s, record.a.index());
                self.records.push(record);
                events.push(LoopEvent::QCellUpdated {
                    state: record.s,
                    action: record.a,
                    old,
                    new,
                });
                events.push(LoopEvent::StepCompleted {
                    episode: self.episode,
                    record,
                    score: self.score,
                });
                if record.done {
                    events.push(self.finish_episode(false));
                }
            }
        }
        self.phase = self.phase.next();
        events.push(LoopEvent::PhaseChanged { phase: self.phase });
        if let Some(kind) = self.awaiting() {
            events.push(LoopEvent::AwaitingInput { kind });
        }
        Ok(Advance::Ran(events))
    }

    /// Closes the running episode, if it has begun, as aborted and starts a
    /// fresh one. Q-values and visit counts are kept; a step in flight is
    /// discarded.
    pub fn restart_episode(&mut self) -> Vec<LoopEvent> {
        let started = !self.records.is_empty() || self.phase != StepPhase::ObserveState;
        let mut events = Vec::new();
        if started {
            self.in_flight = None;
            events.push(self.finish_episode(true));
        }
        self.advice_slot = None;
        self.reward_slot = None;
        if self.phase != StepPhase::ObserveState {
            self.phase = StepPhase::ObserveState;
            events.push(LoopEvent::PhaseChanged { phase: self.phase });
        }
        events
    }

    fn finish_episode(&mut self, aborted: bool) -> LoopEvent {
        let records = std::mem::take(&mut self.records);
        let cells = self.config.num_cells();
        let found_treasure = records.last().is_some_and(|r| r.s_next >= cells);
        let log = close_episode(self.episode, records, self.score, found_treasure, aborted);
        let event = LoopEvent::EpisodeCompleted {
            episode: log.episode_index,
            score: log.score,
            steps: log.records.len(),
            found_treasure: log.found_treasure,
            terminated_by: log.terminated_by,
            aborted,
        };
        self.completed.push(log);
        self.episode += 1;
        self.score = 0.0;
        self.last_action = None;
        self.last_reward = None;
        self.env = mdp::reset(&self.config);
        self.observed = mdp::state_index(&self.env, &self.config);
        event
    }

    /// Runs phases until one full step completes or the loop parks.
    pub fn run_step(&mut self) -> Result<(Vec<LoopEvent>, Option<AwaitingKind>), HitlError> {
        let mut events = Vec::new();
        loop {
            let was = self.phase;
            match self.advance()? {
                Advance::Parked(kind) => return Ok((events, Some(kind))),
                Advance::Ran(mut ev) => {
                    events.append(&mut ev);
                    if was == StepPhase::UpdateQ {
                        return Ok((events, None));
                    }
                }
            }
        }
    }
}
