//! Versioned JSON documents: maze configs, Q-table exports and session
//! snapshots all carry a `schema_version` that is checked before the body is
//! decoded.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::ConfigViolation;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{kind} parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        kind: &'static str,
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{kind} schema_version {found} is not supported (expected {expected})")]
    SchemaVersion {
        kind: &'static str,
        found: u64,
        expected: u32,
    },
    #[error("invalid maze config: {}", join(.0))]
    InvalidConfig(Vec<ConfigViolation>),
    #[error("{0}")]
    Inconsistent(String),
}

fn join(errs: &[ConfigViolation]) -> String {
    errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u64,
}

fn parse_error(kind: &'static str, text: &str, err: serde_json::Error) -> FormatError {
    let (line, column) = (err.line(), err.column());
    FormatError::Parse {
        kind,
        offset: byte_offset(text, line, column),
        line,
        column,
        message: err.to_string(),
    }
}

/// serde_json reports 1-based lines and columns; column 0 means the error
/// sits before the first character of the line.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

pub fn parse_versioned<T: DeserializeOwned>(text: &str, kind: &'static str, expected: u32) -> Result<T, FormatError> {
    let probe: VersionProbe = serde_json::from_str(text).map_err(|e| parse_error(kind, text, e))?;
    if probe.schema_version != u64::from(expected) {
        return Err(FormatError::SchemaVersion {
            kind,
            found: probe.schema_version,
            expected,
        });
    }
    serde_json::from_str(text).map_err(|e| parse_error(kind, text, e))
}

/// Pretty JSON with a trailing newline. Field order follows the struct
/// definitions, so equal values always produce identical bytes.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut out = serde_json::to_string_pretty(value).expect("documents serialize infallibly");
    out.push('\n');
    out
}

pub fn read_text(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), FormatError> {
    std::fs::write(path, text).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}
