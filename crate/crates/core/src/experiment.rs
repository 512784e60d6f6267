//! Headless training runs and the advised-versus-autonomous experiment.
//!
//! Each run has two random streams derived from its seed: stream 0 drives the
//! agent, stream 1 the scripted teacher. Arms of the same seed therefore see
//! identical agent randomness and differ only in the teacher.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Action, MazeConfig};
use crate::oracle::{self, OracleError};
use crate::qlearn::{self, run_episode, AdviceContext, EpisodeLog, Hyperparams, QError, QTable, Teacher, VisitCounts};
use crate::rng::SeededRng;

pub const AGENT_STREAM: u64 = 0;
pub const TEACHER_STREAM: u64 = 1;

/// Discount tolerance used to build reference policies.
pub const ORACLE_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("experiment needs at least one seed")]
    NoSeeds,
    #[error("advice probability {0} outside [0, 1]")]
    AdviceProbability(f64),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Learning(#[from] QError),
}

/// The reference behaviour: oracle Q-table, the greedy path it takes from
/// the start, and the states along that path.
#[derive(Debug, Clone)]
pub struct Reference {
    pub q: QTable,
    pub actions: Vec<Action>,
    pub states: Vec<usize>,
}

impl Reference {
    pub fn new(config: &MazeConfig, gamma: f64) -> Result<Self, OracleError> {
        let q = oracle::value_iteration(config, gamma, ORACLE_TOL)?.q;
        let trace = oracle::greedy_trace(&q, config);
        Ok(Self {
            actions: trace.iter().map(|t| t.action).collect(),
            states: trace.iter().map(|t| t.s).collect(),
            q,
        })
    }

    pub fn matches_episode(&self, log: &EpisodeLog) -> bool {
        log.records.len() == self.actions.len() && log.records.iter().zip(&self.actions).all(|(r, a)| r.a == *a)
    }

    /// Whether `q` strictly prefers the reference action in every state of
    /// the reference path.
    pub fn policy_agrees(&self, q: &QTable) -> bool {
        self.states
            .iter()
            .zip(&self.actions)
            .all(|(s, a)| qlearn::strict_argmax(q, *s) == Some(*a))
    }
}

/// Advises the oracle action with a fixed probability during the first
/// `first_k_episodes` episodes.
pub struct OracleTeacher<'a> {
    reference: &'a QTable,
    first_k_episodes: u64,
    advice_probability: f64,
    rng: SeededRng,
}

impl<'a> OracleTeacher<'a> {
    pub fn new(reference: &'a QTable, first_k_episodes: u64, advice_probability: f64, seed: u64) -> Self {
        Self {
            reference,
            first_k_episodes,
            advice_probability,
            rng: SeededRng::with_stream(seed, TEACHER_STREAM),
        }
    }
}

impl Teacher for OracleTeacher<'_> {
    fn advise(&mut self, ctx: &AdviceContext<'_>) -> Option<Action> {
        if ctx.episode >= self.first_k_episodes || self.rng.gen::<f64>() >= self.advice_probability {
            return None;
        }
        qlearn::greedy_action(self.reference, ctx.s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TeacherSpec {
    None,
    OracleAdvice {
        first_k_episodes: u64,
        advice_probability: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub config: MazeConfig,
    pub hyperparams: Hyperparams,
    pub seeds: Vec<u64>,
    /// Episode budget per run; runs that never succeed are censored here.
    pub episodes: u64,
    pub teacher: TeacherSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Autonomous,
    Advised,
}

/// Outcome of one (seed, arm) run. Episode counts are 1-based: a value of 1
/// means the very first episode qualified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub arm: Arm,
    pub episodes_to_first_optimal: Option<u64>,
    pub episodes_to_policy_agreement: Option<u64>,
    pub episodes_run: u64,
    pub advised_steps: u64,
    pub total_steps: u64,
    /// Score of every episode run, in order.
    pub curve: Vec<f64>,
}

impl RunResult {
    pub fn censored(&self) -> bool {
        self.episodes_to_first_optimal.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub runs: usize,
    pub censored: usize,
    /// `None` when the median falls on a censored run.
    pub median_episodes_to_first_optimal: Option<f64>,
    pub median_episodes_to_policy_agreement: Option<f64>,
    pub advised_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: Vec<RunResult>,
    pub summary: Vec<ArmSummary>,
}

/// Median where `None` (censored) sorts above every observed value.
pub fn censored_median(values: impl IntoIterator<Item = Option<u64>>) -> Option<f64> {
    let mut v: Vec<Option<u64>> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| match (a, b) {
        (Some(a), Some(b)) => a.cmp(b),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2].map(|x| x as f64)
    } else {
        Some((v[n / 2 - 1]? as f64 + v[n / 2]? as f64) / 2.0)
    }
}

/// Trains one agent until it has both walked the reference path and adopted
/// the reference policy along it, or until `episodes` have run.
pub fn run_arm(
    config: &MazeConfig,
    hp: &Hyperparams,
    reference: &Reference,
    seed: u64,
    episodes: u64,
    teacher: TeacherSpec,
) -> Result<RunResult, QError> {
    let mut q = QTable::for_maze(config);
    let mut visits = VisitCounts::for_maze(config);
    let mut rng = SeededRng::with_stream(seed, AGENT_STREAM);
    let mut oracle_teacher = match teacher {
        TeacherSpec::None => None,
        TeacherSpec::OracleAdvice {
            first_k_episodes,
            advice_probability,
        } => Some(OracleTeacher::new(
            &reference.q,
            first_k_episodes,
            advice_probability,
            seed,
        )),
    };
    let arm = if oracle_teacher.is_some() {
        Arm::Advised
    } else {
        Arm::Autonomous
    };
    let mut result = RunResult {
        seed,
        arm,
        episodes_to_first_optimal: None,
        episodes_to_policy_agreement: None,
        episodes_run: 0,
        advised_steps: 0,
        total_steps: 0,
        curve: Vec::new(),
    };
    for episode in 0..episodes {
        let hook = oracle_teacher.as_mut().map(|t| t as &mut dyn Teacher);
        let log = run_episode(config, &mut q, &mut visits, hp, &mut rng, episode, hook)?;
        result.episodes_run += 1;
        result.total_steps += log.records.len() as u64;
        result.advised_steps += log.advised_steps() as u64;
        result.curve.push(log.score);
        if result.episodes_to_first_optimal.is_none() && reference.matches_episode(&log) {
            result.episodes_to_first_optimal = Some(episode + 1);
        }
        if result.episodes_to_policy_agreement.is_none() && reference.policy_agrees(&q) {
            result.episodes_to_policy_agreement = Some(episode + 1);
        }
        if result.episodes_to_first_optimal.is_some() && result.episodes_to_policy_agreement.is_some() {
            break;
        }
    }
    Ok(result)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, ExperimentError> {
    if spec.seeds.is_empty() {
        return Err(ExperimentError::NoSeeds);
    }
    let teacher = match spec.teacher {
        TeacherSpec::OracleAdvice { advice_probability, .. } if !(0.0..=1.0).contains(&advice_probability) => {
            return Err(ExperimentError::AdviceProbability(advice_probability))
        }
        TeacherSpec::None => TeacherSpec::OracleAdvice {
            first_k_episodes: 0,
            advice_probability: 0.0,
        },
        t => t,
    };
    let reference = Reference::new(&spec.config, spec.hyperparams.gamma())?;
    let mut runs = Vec::with_capacity(spec.seeds.len() * 2);
    for &seed in &spec.seeds {
        runs.push(run_arm(
            &spec.config,
            &spec.hyperparams,
            &reference,
            seed,
            spec.episodes,
            TeacherSpec::None,
        )?);
        runs.push(run_arm(
            &spec.config,
            &spec.hyperparams,
            &reference,
            seed,
            spec.episodes,
            teacher,
        )?);
    }
    let summary = [Arm::Autonomous, Arm::Advised]
        .into_iter()
        .map(|arm| {
            let arm_runs: Vec<&RunResult> = runs.iter().filter(|r| r.arm == arm).collect();
            ArmSummary {
                arm,
                runs: arm_runs.len(),
                censored: arm_runs.iter().filter(|r| r.censored()).count(),
                median_episodes_to_first_optimal: censored_median(arm_runs.iter().map(|r| r.episodes_to_first_optimal)),
                median_episodes_to_policy_agreement: censored_median(
                    arm_runs.iter().map(|r| r.episodes_to_policy_agreement),
                ),
                advised_steps: arm_runs.iter().map(|r| r.advised_steps).sum(),
            }
        })
        .collect();
    Ok(ExperimentReport { runs, summary })
}

#[derive(Serialize)]
struct ReportRow {
    seed: u64,
    arm: Arm,
    episodes_to_first_optimal: Option<u64>,
    censored: bool,
    episodes_to_policy_agreement: Option<u64>,
    episodes_run: u64,
    advised_steps: u64,
    total_steps: u64,
}

impl ExperimentReport {
    pub fn summary_for(&self, arm: Arm) -> &ArmSummary {
        self.summary
            .iter()
            .find(|s| s.arm == arm)
            .expect("both arms summarized")
    }

    /// One row per (seed, arm).
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.runs {
            w.serialize(ReportRow {
                seed: r.seed,
                arm: r.arm,
                episodes_to_first_optimal: r.episodes_to_first_optimal,
                censored: r.censored(),
                episodes_to_policy_agreement: r.episodes_to_policy_agreement,
                episodes_run: r.episodes_run,
                advised_steps: r.advised_steps,
                total_steps: r.total_steps,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-episode scores: `seed,arm,episode,score`.
    pub fn write_curves<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seed", "arm", "episode", "score"])?;
        for r in &self.runs {
            let arm = match r.arm {
                Arm::Autonomous => "autonomous",
                Arm::Advised => "advised",
            };
            for (i, score) in r.curve.iter().enumerate() {
                w.write_record([r.seed.to_string(), arm.to_string(), i.to_string(), score.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_text(&self) -> String {
        let fmt = |m: Option<f64>| m.map_or_else(|| "censored".to_string(), |v| format!("{v}"));
        let mut out = String::new();
        for s in &self.summary {
            out.push_str(&format!(
                "{:<10} runs={} censored={} median_first_optimal={} median_policy_agreement={} advised_steps={}\n",
                format!("{:?}", s.arm).to_lowercase(),
                s.runs,
                s.censored,
                fmt(s.median_episodes_to_first_optimal),
                fmt(s.median_episodes_to_policy_agreement),
                s.advised_steps,
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(censored_median([Some(3), Some(1), Some(2)]), Some(2.0));
        assert_eq!(censored_median([Some(3), Some(1), Some(2), Some(10)]), Some(2.5));
        assert_eq!(censored_median([Some(3), None, None]), None);
        assert_eq!(censored_median([Some(3), Some(4), None]), Some(4.0));
        assert_eq!(censored_median(Vec::<Option<u64>>::new()), None);
    }

    fn spec(seeds: Vec<u64>, teacher: TeacherSpec) -> ExperimentSpec {
        ExperimentSpec {
            config: MazeConfig::default(),
            hyperparams: Hyperparams::default(),
            seeds,
            episodes: 2_000,
            teacher,
        }
    }

    #[test]
    fn single_seed_gives_two_rows() {
        let report = run_experiment(&spec(
            vec![5],
            TeacherSpec::OracleAdvice {
                first_k_episodes: 10,
                advice_probability: 1.0,
            },
        ))
        .unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
        assert_eq!(report.runs.len(), 2);
    }

    #[test]
    fn zero_probability_arms_are_identical() {
        let report = run_experiment(&spec(
            vec![1, 2, 3],
            TeacherSpec::OracleAdvice {
                first_k_episodes: 10,
                advice_probability: 0.0,
            },
        ))
        .unwrap();
        for pair in report.runs.chunks(2) {
            assert_eq!(pair[0].curve, pair[1].curve);
            assert_eq!(pair[0].episodes_to_first_optimal, pair[1].episodes_to_first_optimal);
            assert_eq!(pair[1].advised_steps, 0);
        }
    }

    #[test]
    fn full_advice_walks_the_reference_path_first() {
        let cfg = MazeConfig::default();
        let hp = Hyperparams::default();
        let reference = Reference::new(&cfg, hp.gamma()).unwrap();
        let teacher = TeacherSpec::OracleAdvice {
            first_k_episodes: 10,
            advice_probability: 1.0,
        };
        let run = run_arm(&cfg, &hp, &reference, 3, 50, teacher).unwrap();
        assert_eq!(run.episodes_to_first_optimal, Some(1));
        assert!(run.advised_steps >= reference.actions.len() as u64);
    }

    #[test]
    fn invalid_specs() {
        assert!(matches!(
            run_experiment(&spec(vec![], TeacherSpec::None)),
            Err(ExperimentError::NoSeeds)
        ));
        let bad = TeacherSpec::OracleAdvice {
            first_k_episodes: 1,
            advice_probability: 1.5,
        };
        assert!(matches!(
            run_experiment(&spec(vec![1], bad)),
            Err(ExperimentError::AdviceProbability(_))
        ));
    }
}
