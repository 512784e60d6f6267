//! Q-table export documents and learning-curve CSV.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::config_to_json;
use crate::format::{self, FormatError};
use crate::mdp::MazeConfig;
use crate::qlearn::{EpisodeLog, Hyperparams, QTable, Termination, VisitCounts};

pub const QEXPORT_SCHEMA_VERSION: u32 = 1;

/// SHA-256 of the canonical config document, hex encoded.
pub fn config_digest(config: &MazeConfig) -> String {
    hex::encode(Sha256::digest(config_to_json(config, None).as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QExport {
    pub schema_version: u32,
    pub config_digest: String,
    pub num_states: usize,
    pub num_actions: usize,
    /// Row-major `[state][action]`.
    pub values: Vec<f64>,
    pub visits: Vec<u64>,
    pub hyperparams: Hyperparams,
    pub seed: Option<u64>,
}

impl QExport {
    pub fn new(
        config: &MazeConfig,
        q: &QTable,
        visits: &VisitCounts,
        hyperparams: Hyperparams,
        seed: Option<u64>,
    ) -> Self {
        Self {
            schema_version: QEXPORT_SCHEMA_VERSION,
            config_digest: config_digest(config),
            num_states: q.num_states(),
            num_actions: q.num_actions(),
            values: q.values().to_vec(),
            visits: visits.counts().to_vec(),
            hyperparams,
            seed,
        }
    }

    /// Rebuilds the table against `config`, checking the digest.
    pub fn to_qtable(&self, config: &MazeConfig) -> Result<QTable, FormatError> {
        if self.config_digest != config_digest(config) {
            return Err(FormatError::Inconsistent(
                "Q export was made for a different maze".into(),
            ));
        }
        let mut q = QTable::for_maze(config);
        if self.values.len() != q.num_states() * q.num_actions() {
            return Err(FormatError::Inconsistent(
                "Q export has the wrong number of values".into(),
            ));
        }
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(FormatError::Inconsistent("Q export holds a non-finite value".into()));
            }
            q.set(i / q.num_actions(), i % q.num_actions(), *v);
        }
        Ok(q)
    }

    pub fn to_json(&self) -> String {
        format::to_canonical_json(self)
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        format::parse_versioned(text, "Q export", QEXPORT_SCHEMA_VERSION)
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        format::write_text(path, &self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::parse(&format::read_text(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: u64,
    pub score: f64,
    pub steps: usize,
    pub found_treasure: bool,
    pub terminated_by: Termination,
    pub advised_steps: usize,
    pub overridden_rewards: usize,
}

impl From<&EpisodeLog> for CurveRow {
    fn from(log: &EpisodeLog) -> Self {
        Self {
            episode: log.episode_index,
            score: log.score,
            steps: log.records.len(),
            found_treasure: log.found_treasure,
            terminated_by: log.terminated_by,
            advised_steps: log.advised_steps(),
            overridden_rewards: log.overridden_rewards(),
        }
    }
}

pub const CURVE_HEADER: [&str; 7] = [
    "episode",
    "score",
    "steps",
    "found_treasure",
    "terminated_by",
    "advised_steps",
    "overridden_rewards",
];

/// One row per finished episode; episodes closed by a reset are skipped.
/// The header is written even when there are no rows.
pub fn write_learning_curve<W: Write>(out: W, episodes: &[EpisodeLog]) -> csv::Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(CURVE_HEADER)?;
    for log in episodes.iter().filter(|e| !e.aborted) {
        writer.serialize(CurveRow::from(log))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn learning_curve_csv(episodes: &[EpisodeLog]) -> String {
    let mut buf = Vec::new();
    write_learning_curve(&mut buf, episodes).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qlearn::run_episode;
    use crate::rng::SeededRng;

    #[test]
    fn csv_header_and_rows() {
        let cfg = MazeConfig::default();
        let mut q = QTable::for_maze(&cfg);
        let mut visits = VisitCounts::for_maze(&cfg);
        let mut rng = SeededRng::new(1);
        let hp = Hyperparams::default();
        let logs: Vec<_> = (0..3)
            .map(|i| run_episode(&cfg, &mut q, &mut visits, &hp, &mut rng, i, None).unwrap())
            .collect();
        let csv = learning_curve_csv(&logs);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next(),
            Some("episode,score,steps,found_treasure,terminated_by,advised_steps,overridden_rewards")
        );
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn export_round_trip() {
        let cfg = MazeConfig::default();
        let mut q = QTable::for_maze(&cfg);
        q.set(3, 1, 12.5);
        let ex = QExport::new(&cfg, &q, &VisitCounts::for_maze(&cfg), Hyperparams::default(), Some(9));
        let back = QExport::parse(&ex.to_json()).unwrap();
        assert_eq!(back, ex);
        assert_eq!(back.to_qtable(&cfg).unwrap(), q);

        let other = MazeConfig {
            walls: vec![],
            ..MazeConfig::default()
        };
        assert!(back.to_qtable(&other).is_err());
    }
}
