//! Text rendering of snapshots and Q-table files.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use treasure_core::config::load_config;
use treasure_core::format::read_text;
use treasure_core::mdp::{cell_state_index, is_terminal_index};
use treasure_core::oracle::greedy_trace;
use treasure_core::qlearn::greedy_action;
use treasure_core::{Action, EpisodeLog, GridPos, Hyperparams, MazeConfig, QTable, Session, Termination};

use crate::InspectArgs;

pub fn run(args: &InspectArgs) -> Result<()> {
    let text = read_text(&args.file)?;
    let probe: serde_json::Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        // let the snapshot parser produce the located diagnostic
        Err(_) => {
            Session::from_snapshot_json(&text).with_context(|| format!("reading {}", args.file.display()))?;
            unreachable!("invalid JSON cannot parse as a snapshot");
        }
    };
    let out = if probe.get("session").is_some() {
        let session = Session::from_snapshot_json(&text).with_context(|| format!("reading {}", args.file.display()))?;
        render_snapshot(&session, args.last)
    } else if probe.get("config_digest").is_some() {
        let export =
            treasure_core::export::QExport::parse(&text).with_context(|| format!("reading {}", args.file.display()))?;
        let config = match &args.config {
            Some(path) => load_config(path)?.maze,
            None => MazeConfig::default(),
        };
        let q = export
            .to_qtable(&config)
            .context("pass --config with the maze this table was made for")?;
        let mut out = String::new();
        render_tables(&mut out, &config, &q, &export.visits, &export.hyperparams);
        if let Some(seed) = export.seed {
            let _ = writeln!(out, "seed {seed}");
        }
        out
    } else {
        bail!(
            "{} is neither a session snapshot nor a Q-table file",
            args.file.display()
        );
    };
    print!("{out}");
    Ok(())
}

pub fn render_snapshot(session: &Session, last: usize) -> String {
    let t = session.training();
    let mut out = String::new();
    let status = t.status();
    let _ = writeln!(
        out,
        "session seed {}  mode {:?}  phase {:?}  episode {}  score {}",
        session.seed(),
        status.mode,
        status.phase,
        status.episode,
        status.score
    );
    render_tables(&mut out, session.config(), t.q(), t.visits().counts(), &t.hyperparams());
    render_episodes(&mut out, t.completed_episodes(), last);
    out
}

fn cell_label(config: &MazeConfig, cell: GridPos) -> Option<char> {
    if cell == config.exit {
        Some('E')
    } else if cell == config.treasure {
        Some('T')
    } else {
        None
    }
}

/// Greedy arrows, values and visit counts for both halves of the state
/// space, then the greedy path from the start.
pub fn render_tables(out: &mut String, config: &MazeConfig, q: &QTable, visits: &[u64], hp: &Hyperparams) {
    let _ = writeln!(
        out,
        "{}x{} maze  start {}  treasure {}  exit {}  walls {}",
        config.width,
        config.height,
        config.start,
        config.treasure,
        config.exit,
        config.walls.len()
    );
    let _ = writeln!(
        out,
        "alpha {}  gamma {}  epsilon {}",
        hp.alpha(),
        hp.gamma(),
        hp.epsilon()
    );
    for flag in [false, true] {
        let _ = writeln!(
            out,
            "\ngreedy actions, treasure {}:",
            if flag { "collected" } else { "not collected" }
        );
        for row in 0..config.height {
            let mut line = String::from(" ");
            for col in 0..config.width {
                let cell = GridPos::new(row, col);
                let s = cell_state_index(cell, flag, config);
                let symbol = if is_terminal_index(s, config) {
                    'E'
                } else {
                    greedy_action(q, s).map_or('.', Action::arrow)
                };
                let mark = cell_label(config, cell).filter(|c| *c != 'E').unwrap_or(' ');
                let _ = write!(line, " {symbol}{mark}");
            }
            let _ = writeln!(out, "{line}");
        }
    }
    let _ = writeln!(out, "\nvalues (U D L R; - masked) and visits:");
    let _ = writeln!(out, "  state cell    flag {:>36}  {:>24}", "Q", "visits");
    for s in 0..config.num_states() {
        if is_terminal_index(s, config) {
            continue;
        }
        let cells = config.num_cells();
        let cell = GridPos::new((s % cells) / config.width, (s % cells) % config.width);
        let mut values = String::new();
        let mut counts = String::new();
        for a in 0..q.num_actions() {
            if q.is_legal(s, a) {
                let _ = write!(values, " {:>8.3}", q.get(s, a));
                let _ = write!(
                    counts,
                    " {:>5}",
                    visits.get(s * q.num_actions() + a).copied().unwrap_or(0)
                );
            } else {
                values.push_str(&format!(" {:>8}", "-"));
                counts.push_str(&format!(" {:>5}", "-"));
            }
        }
        let _ = writeln!(
            out,
            "  {s:>5} {:<7} {:<4} {values}  {counts}",
            cell.to_string(),
            u8::from(s >= cells)
        );
    }
    let path: String = greedy_trace(q, config).iter().map(|t| t.action.arrow()).collect();
    let _ = writeln!(out, "\ngreedy path from start: {path}");
}

fn render_episodes(out: &mut String, episodes: &[EpisodeLog], last: usize) {
    let shown = episodes.len().min(last);
    let _ = writeln!(out, "\nepisodes: {} completed, showing last {shown}", episodes.len());
    if shown == 0 {
        return;
    }
    let _ = writeln!(
        out,
        "  {:>7} {:>6} {:>8} {:>8} {:>8} {:>7} {:>10}",
        "episode", "steps", "score", "treasure", "end", "advised", "overridden"
    );
    for e in &episodes[episodes.len() - shown..] {
        let end = match (e.aborted, e.terminated_by) {
            (true, _) => "aborted",
            (false, Termination::Exit) => "exit",
            (false, Termination::Timeout) => "timeout",
        };
        let _ = writeln!(
            out,
            "  {:>7} {:>6} {:>8} {:>8} {:>8} {:>7} {:>10}",
            e.episode_index,
            e.records.len(),
            e.score,
            if e.found_treasure { "yes" } else { "no" },
            end,
            e.advised_steps(),
            e.overridden_rewards()
        );
    }
}
