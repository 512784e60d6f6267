//! Tabular Q-learning: the table, the update rule, ε-greedy selection and the
//! episode runner used for headless training.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{self, Action, EnvState, MazeConfig, MdpError, StepEvent, StepOutcome};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QError {
    #[error("state {state} or action {action} out of range")]
    OutOfRange { state: usize, action: usize },
    #[error("non-finite value in update: {0}")]
    NonFinite(&'static str),
    #[error("{0} out of range")]
    Hyperparam(&'static str),
    #[error("no legal actions to choose from")]
    NoLegalActions,
    #[error("advised action {0} is masked here")]
    IllegalAdvice(Action),
    #[error(transparent)]
    Env(#[from] MdpError),
}

/// Action values indexed `[state][action]`, with a mask of the actions that
/// exist in each state. Masked entries stay at zero and are ignored by every
/// max and argmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QTableRepr", into = "QTableRepr")]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
    legal: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QTableRepr {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
    legal: Vec<bool>,
}

impl TryFrom<QTableRepr> for QTable {
    type Error = String;

    fn try_from(r: QTableRepr) -> Result<Self, Self::Error> {
        let n = r.num_states * r.num_actions;
        if r.values.len() != n || r.legal.len() != n {
            return Err(format!(
                "Q-table holds {} values for {}x{}",
                r.values.len(),
                r.num_states,
                r.num_actions
            ));
        }
        if r.values.iter().any(|v| !v.is_finite()) {
            return Err("Q-table contains a non-finite value".into());
        }
        Ok(QTable {
            num_states: r.num_states,
            num_actions: r.num_actions,
            values: r.values,
            legal: r.legal,
        })
    }
}

impl From<QTable> for QTableRepr {
    fn from(q: QTable) -> Self {
        QTableRepr {
            num_states: q.num_states,
            num_actions: q.num_actions,
            values: q.values,
            legal: q.legal,
        }
    }
}

impl QTable {
    /// All-zero table with every action available.
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            values: vec![0.0; num_states * num_actions],
            legal: vec![true; num_states * num_actions],
        }
    }

    /// All-zero table for a maze, masking boundary-crossing actions.
    pub fn for_maze(config: &MazeConfig) -> Self {
        let mut q = Self::new(config.num_states(), Action::COUNT);
        for s in 0..q.num_states {
            let (pos, _) = mdp::state_from_index(s, config).expect("index in range");
            let legal = mdp::legal_at(pos, config);
            for a in Action::ALL {
                q.legal[s * Action::COUNT + a.index()] = legal.contains(&a);
            }
        }
        q
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    /// Overwrites one entry. Used to seed tables in tests and experiments;
    /// learning goes through [`q_update`].
    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        assert!(value.is_finite(), "Q values must be finite");
        self.values[s * self.num_actions + a] = value;
    }

    pub fn is_legal(&self, s: usize, a: usize) -> bool {
        self.legal[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest value over the available actions of `s`; zero when none are.
    pub fn max_legal(&self, s: usize) -> f64 {
        (0..self.num_actions)
            .filter(|&a| self.is_legal(s, a))
            .map(|a| self.get(s, a))
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
            .unwrap_or(0.0)
    }

    /// Global (min, max) over available entries, for colour normalization.
    pub fn legal_range(&self) -> (f64, f64) {
        let mut it = self
            .values
            .iter()
            .zip(&self.legal)
            .filter(|(_, l)| **l)
            .map(|(v, _)| *v);
        let first = it.next().unwrap_or(0.0);
        it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VisitRepr", into = "VisitRepr")]
pub struct VisitCounts {
    num_actions: usize,
    counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisitRepr {
    num_states: usize,
    num_actions: usize,
    counts: Vec<u64>,
}

impl TryFrom<VisitRepr> for VisitCounts {
    type Error = String;

    fn try_from(r: VisitRepr) -> Result<Self, Self::Error> {
        if r.counts.len() != r.num_states * r.num_actions {
            return Err("visit count dimensions do not match".into());
        }
        Ok(VisitCounts {
            num_actions: r.num_actions,
            counts: r.counts,
        })
    }
}

impl From<VisitCounts> for VisitRepr {
    fn from(v: VisitCounts) -> Self {
        VisitRepr {
            num_states: v.num_states(),
            num_actions: v.num_actions,
            counts: v.counts,
        }
    }
}

impl VisitCounts {
    pub fn new(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_actions,
            counts: vec![0; num_states * num_actions],
        }
    }

    pub fn for_maze(config: &MazeConfig) -> Self {
        Self::new(config.num_states(), Action::COUNT)
    }

    pub fn num_states(&self) -> usize {
        self.counts.len().checked_div(self.num_actions).unwrap_or(0)
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> u64 {
        self.counts[s * self.num_actions + a]
    }

    pub fn increment(&mut self, s: usize, a: usize) {
        self.counts[s * self.num_actions + a] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}

/// Learning rate, discount and exploration rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HyperparamsRepr", into = "HyperparamsRepr")]
pub struct Hyperparams {
    alpha: f64,
    gamma: f64,
    epsilon: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperparamsRepr {
    alpha: f64,
    gamma: f64,
    epsilon: f64,
}

impl TryFrom<HyperparamsRepr> for Hyperparams {
    type Error = QError;

    fn try_from(r: HyperparamsRepr) -> Result<Self, QError> {
        Hyperparams::new(r.alpha, r.gamma, r.epsilon)
    }
}

impl From<Hyperparams> for HyperparamsRepr {
    fn from(h: Hyperparams) -> Self {
        HyperparamsRepr {
            alpha: h.alpha,
            gamma: h.gamma,
            epsilon: h.epsilon,
        }
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            gamma: 0.9,
            epsilon: 0.3,
        }
    }
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<f64, QError> {
    if (0.0..=1.0).contains(&epsilon) {
        Ok(epsilon)
    } else {
        Err(QError::Hyperparam("epsilon"))
    }
}

impl Hyperparams {
    /// alpha in (0, 1], gamma in [0, 1), epsilon in [0, 1].
    pub fn new(alpha: f64, gamma: f64, epsilon: f64) -> Result<Self, QError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(QError::Hyperparam("alpha"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(QError::Hyperparam("gamma"));
        }
        check_epsilon(epsilon)?;
        Ok(Self { alpha, gamma, epsilon })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn with_epsilon(self, epsilon: f64) -> Result<Self, QError> {
        Ok(Self {
            epsilon: check_epsilon(epsilon)?,
            ..self
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardSource {
    Automatic,
    HumanOverride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionSource {
    Greedy,
    Exploratory,
    Advised,
}

/// One executed transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub s: usize,
    pub a: Action,
    pub r: f64,
    pub s_next: usize,
    pub done: bool,
    pub event: StepEvent,
    pub reward_source: RewardSource,
    pub action_source: ActionSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Exit,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub episode_index: u64,
    pub records: Vec<StepRecord>,
    pub score: f64,
    pub found_treasure: bool,
    pub terminated_by: Termination,
    /// Closed early by a session reset; excluded from learning curves.
    pub aborted: bool,
}

impl EpisodeLog {
    pub fn advised_steps(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.action_source == ActionSource::Advised)
            .count()
    }

    pub fn overridden_rewards(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.reward_source == RewardSource::HumanOverride)
            .count()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.records.iter().map(|r| r.a).collect()
    }
}

/// Applies the Q-learning update for `rec` and returns the new entry.
///
/// The bootstrap term is the best available action value of `rec.s_next`,
/// or zero when the transition ended the episode.
pub fn q_update(q: &mut QTable, rec: &StepRecord, alpha: f64, gamma: f64) -> Result<f64, QError> {
    let a = rec.a.index();
    if rec.s >= q.num_states || rec.s_next >= q.num_states || a >= q.num_actions {
        return Err(QError::OutOfRange {
            state: rec.s.max(rec.s_next),
            action: a,
        });
    }
    if !rec.r.is_finite() {
        return Err(QError::NonFinite("reward"));
    }
    if !(alpha.is_finite() && gamma.is_finite()) {
        return Err(QError::NonFinite("hyperparameter"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(QError::Hyperparam("alpha"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(QError::Hyperparam("gamma"));
    }
    let old = q.get(rec.s, a);
    let bootstrap = if rec.done { 0.0 } else { q.max_legal(rec.s_next) };
    let target = rec.r + gamma * bootstrap;
    let new = old + alpha * (target - old);
    if !new.is_finite() {
        return Err(QError::NonFinite("updated value"));
    }
    q.values[rec.s * q.num_actions + a] = new;
    Ok(new)
}

/// ε-greedy choice among `legal`.
///
/// Draw order: one uniform `f64` decides exploration (`< epsilon`); an
/// exploratory step then draws one index over `legal`, a greedy step draws
/// one index over the tied maxima only when there is more than one.
pub fn select_action<R: Rng + ?Sized>(
    q: &QTable,
    s: usize,
    legal: &[Action],
    epsilon: f64,
    rng: &mut R,
) -> Result<(Action, ActionSource), QError> {
    if legal.is_empty() {
        return Err(QError::NoLegalActions);
    }
    check_epsilon(epsilon)?;
    if rng.gen::<f64>() < epsilon {
        let i = rng.gen_range(0..legal.len());
        return Ok((legal[i], ActionSource::Exploratory));
    }
    let best = legal
        .iter()
        .map(|a| q.get(s, a.index()))
        .fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<Action> = legal.iter().copied().filter(|a| q.get(s, a.index()) == best).collect();
    let choice = if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.gen_range(0..ties.len())]
    };
    Ok((choice, ActionSource::Greedy))
}

pub struct AdviceContext<'a> {
    pub episode: u64,
    pub state: &'a EnvState,
    pub s: usize,
    pub legal: &'a [Action],
}

pub struct ReviewContext<'a> {
    pub episode: u64,
    pub s: usize,
    pub a: Action,
    pub outcome: &'a StepOutcome,
}

/// A scripted stand-in for the human: may advise the next action and may
/// replace the automatic reward of the step just taken.
pub trait Teacher {
    fn advise(&mut self, _ctx: &AdviceContext<'_>) -> Option<Action> {
        None
    }

    fn review(&mut self, _ctx: &ReviewContext<'_>) -> Option<f64> {
        None
    }
}

/// Runs one episode from reset to termination, learning online.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<R: Rng + ?Sized>(
    config: &MazeConfig,
    q: &mut QTable,
    counts: &mut VisitCounts,
    hp: &Hyperparams,
    rng: &mut R,
    episode_index: u64,
    mut teacher: Option<&mut dyn Teacher>,
) -> Result<EpisodeLog, QError> {
    let mut state = mdp::reset(config);
    let mut records = Vec::new();
    let mut score = 0.0;
    while !state.done {
        let s = mdp::state_index(&state, config);
        let legal = mdp::legal_actions(&state, config)?;
        let advice = teacher.as_deref_mut().and_then(|t| {
            t.advise(&AdviceContext {
                episode: episode_index,
                state: &state,
                s,
                legal: &legal,
            })
        });
        let (a, action_source) = match advice {
            Some(a) if legal.contains(&a) => (a, ActionSource::Advised),
            Some(a) => return Err(QError::IllegalAdvice(a)),
            None => select_action(q, s, &legal, hp.epsilon(), rng)?,
        };
        counts.increment(s, a.index());
        let outcome = mdp::step(&state, a, config)?;
        let review = teacher.as_deref_mut().and_then(|t| {
            t.review(&ReviewContext {
                episode: episode_index,
                s,
                a,
                outcome: &outcome,
            })
        });
        let (r, reward_source) = match review {
            Some(r) => (r, RewardSource::HumanOverride),
            None => (outcome.reward, RewardSource::Automatic),
        };
        let rec = StepRecord {
            s,
            a,
            r,
            s_next: mdp::state_index(&outcome.next, config),
            done: outcome.next.done,
            event: outcome.event,
            reward_source,
            action_source,
        };
        q_update(q, &rec, hp.alpha(), hp.gamma())?;
        score += r;
        records.push(rec);
        state = outcome.next;
    }
    Ok(close_episode(
        episode_index,
        records,
        score,
        state.treasure_collected,
        false,
    ))
}

pub(crate) fn close_episode(
    episode_index: u64,
    records: Vec<StepRecord>,
    score: f64,
    found_treasure: bool,
    aborted: bool,
) -> EpisodeLog {
    let terminated_by = match records.last() {
        Some(r) if r.event == StepEvent::ExitReached && !aborted => Termination::Exit,
        _ => Termination::Timeout,
    };
    EpisodeLog {
        episode_index,
        records,
        score,
        found_treasure,
        terminated_by,
        aborted,
    }
}

/// Greedy action for every non-terminal state, ties going to the lowest
/// action encoding.
pub fn greedy_policy(q: &QTable, config: &MazeConfig) -> BTreeMap<usize, Action> {
    (0..config.num_states())
        .filter(|&s| !mdp::is_terminal_index(s, config))
        .filter_map(|s| greedy_action(q, s).map(|a| (s, a)))
        .collect()
}

/// First action (in encoding order) attaining the best available value.
pub fn greedy_action(q: &QTable, s: usize) -> Option<Action> {
    let mut best: Option<(Action, f64)> = None;
    for a in Action::ALL {
        if a.index() >= q.num_actions() || !q.is_legal(s, a.index()) {
            continue;
        }
        let v = q.get(s, a.index());
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((a, v));
        }
    }
    best.map(|(a, _)| a)
}

/// The action strictly better than every other available action in `s`, if
/// there is one.
pub fn strict_argmax(q: &QTable, s: usize) -> Option<Action> {
    let best = greedy_action(q, s)?;
    let v = q.get(s, best.index());
    let unique = (0..q.num_actions())
        .filter(|&a| a != best.index() && q.is_legal(s, a))
        .all(|a| q.get(s, a) < v);
    unique.then_some(best)
}
