//! Server settings: an optional versioned JSON file, then environment
//! overrides.
//!
//! ```json
//! {"schema_version": 1, "bind": "127.0.0.1:8080", "bridge_url": null,
//!  "step_interval_ms": 300, "bridge_timeout_ms": 2000}
//! ```

use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use treasure_core::format::{self, FormatError};
use treasure_core::session::DEFAULT_STEP_INTERVAL_MS;

pub const SETTINGS_SCHEMA_VERSION: u32 = 1;

pub const ENV_BIND: &str = "TREASURE_BIND";
pub const ENV_BRIDGE_URL: &str = "TREASURE_BRIDGE_URL";
pub const ENV_STEP_INTERVAL_MS: &str = "TREASURE_STEP_INTERVAL_MS";
pub const ENV_BRIDGE_TIMEOUT_MS: &str = "TREASURE_BRIDGE_TIMEOUT_MS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSettings {
    #[serde(default = "default_bind")]
    pub bind: SocketAddr,
    /// Robot bridge base URL. Sessions run without a robot when unset.
    #[serde(default)]
    pub bridge_url: Option<String>,
    #[serde(default = "default_step_interval")]
    pub step_interval_ms: u64,
    #[serde(default = "default_bridge_timeout")]
    pub bridge_timeout_ms: u64,
}

fn default_bind() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_step_interval() -> u64 {
    DEFAULT_STEP_INTERVAL_MS
}

fn default_bridge_timeout() -> u64 {
    2000
}

impl Default for ServerSettings {
    fn default() -> Self {
        Self {
            bind: default_bind(),
            bridge_url: None,
            step_interval_ms: default_step_interval(),
            bridge_timeout_ms: default_bridge_timeout(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SettingsFile {
    #[allow(dead_code)]
    schema_version: u32,
    #[serde(default = "default_bind")]
    bind: SocketAddr,
    #[serde(default)]
    bridge_url: Option<String>,
    #[serde(default = "default_step_interval")]
    step_interval_ms: u64,
    #[serde(default = "default_bridge_timeout")]
    bridge_timeout_ms: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum SettingsError {
    #[error(transparent)]
    File(#[from] FormatError),
    #[error("{var}: cannot parse {value:?}")]
    Env { var: &'static str, value: String },
}

impl ServerSettings {
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let file: SettingsFile = format::parse_versioned(text, "server settings", SETTINGS_SCHEMA_VERSION)?;
        Ok(Self {
            bind: file.bind,
            bridge_url: file.bridge_url,
            step_interval_ms: file.step_interval_ms,
            bridge_timeout_ms: file.bridge_timeout_ms,
        })
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::parse(&format::read_text(path)?)
    }

    /// Applies overrides from `lookup` (normally `std::env::var`). An empty
    /// bridge URL switches the bridge off.
    pub fn with_overrides(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, SettingsError> {
        fn parsed<T: std::str::FromStr>(var: &'static str, value: String) -> Result<T, SettingsError> {
            value.trim().parse().map_err(|_| SettingsError::Env { var, value })
        }
        if let Some(v) = lookup(ENV_BIND) {
            self.bind = parsed(ENV_BIND, v)?;
        }
        if let Some(v) = lookup(ENV_BRIDGE_URL) {
            self.bridge_url = if v.trim().is_empty() {
                None
            } else {
                Some(v.trim().to_string())
            };
        }
        if let Some(v) = lookup(ENV_STEP_INTERVAL_MS) {
            self.step_interval_ms = parsed(ENV_STEP_INTERVAL_MS, v)?;
        }
        if let Some(v) = lookup(ENV_BRIDGE_TIMEOUT_MS) {
            self.bridge_timeout_ms = parsed(ENV_BRIDGE_TIMEOUT_MS, v)?;
        }
        Ok(self)
    }

    pub fn from_env(self) -> Result<Self, SettingsError> {
        self.with_overrides(|k| std::env::var(k).ok())
    }

    pub fn bridge_timeout(&self) -> Duration {
        Duration::from_millis(self.bridge_timeout_ms)
    }
}
