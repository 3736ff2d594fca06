//! Cluster configuration file: schema, defaults and validation.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frontend::{DEFAULT_INFLIGHT, DEFAULT_SPLIT_THRESHOLD};

pub const DEFAULT_HEARTBEAT_MS: u64 = 1_000;
pub const DEFAULT_MISSED_HEARTBEATS: u32 = 2;
pub const DEFAULT_STARTUP_TIMEOUT_MS: u64 = 15_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
}

impl Endpoint {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        Self { host: host.into(), port }
    }

    pub fn address(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrontendConfig {
    pub host: String,
    /// Wire-protocol control port (heartbeats, stop).
    pub port: u16,
    pub http_port: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BackendConfig {
    pub host: String,
    pub port: u16,
    #[serde(default)]
    pub external: bool,
    /// Serves `GET /stats` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats_port: Option<u16>,
    /// Handler slots; defaults to the visible CPU count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concurrency: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ClusterConfig {
    pub scheduler_endpoint: Endpoint,
    pub frontends: Vec<FrontendConfig>,
    pub backends: Vec<BackendConfig>,
    #[serde(default = "default_split_threshold")]
    pub split_threshold: u64,
    #[serde(default = "default_inflight")]
    pub default_inflight: usize,
    #[serde(default = "default_heartbeat")]
    pub heartbeat_interval_ms: u64,
    #[serde(default = "default_missed")]
    pub missed_heartbeats_before_restart: u32,
    #[serde(default = "default_startup_timeout")]
    pub startup_timeout_ms: u64,
    pub data_dir: PathBuf,
}

fn default_split_threshold() -> u64 {
    DEFAULT_SPLIT_THRESHOLD
}
fn default_inflight() -> usize {
    DEFAULT_INFLIGHT
}
fn default_heartbeat() -> u64 {
    DEFAULT_HEARTBEAT_MS
}
fn default_missed() -> u32 {
    DEFAULT_MISSED_HEARTBEATS
}
fn default_startup_timeout() -> u64 {
    DEFAULT_STARTUP_TIMEOUT_MS
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Unreadable { path: String, message: String },
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    ConfigInvalid(Vec<String>),
}

impl ConfigError {
    pub fn diagnostics(&self) -> Vec<String> {
        match self {
            ConfigError::ConfigInvalid(d) => d.clone(),
            other => vec![other.to_string()],
        }
    }
}

impl ClusterConfig {
    /// Parses JSON text, fills defaults and checks every constraint.
    /// A relative `dataDir` is resolved against `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg: ClusterConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::ConfigInvalid(vec![format!("schema: {e}")]))?;
        if let Some(base) = base {
            if cfg.data_dir.is_relative() && !cfg.data_dir.as_os_str().is_empty() {
                cfg.data_dir = base.join(&cfg.data_dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Collects every violation rather than stopping at the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        if self.frontends.is_empty() {
            errs.push("at least one front-end must be configured".to_string());
        }
        if self.backends.is_empty() {
            errs.push("at least one back-end must be configured".to_string());
        }
        if self.split_threshold == 0 {
            errs.push("splitThreshold must be positive".to_string());
        }
        if self.default_inflight == 0 {
            errs.push("defaultInflight must be positive".to_string());
        }
        if self.heartbeat_interval_ms == 0 {
            errs.push("heartbeatIntervalMs must be positive".to_string());
        }
        if self.missed_heartbeats_before_restart == 0 {
            errs.push("missedHeartbeatsBeforeRestart must be at least 1".to_string());
        }
        if self.startup_timeout_ms == 0 {
            errs.push("startupTimeoutMs must be positive".to_string());
        }
        if self.data_dir.as_os_str().is_empty() {
            errs.push("dataDir must be set".to_string());
        }
        let mut seen: HashMap<(String, u16), String> = HashMap::new();
        let mut claim = |host: &str, port: u16, who: String, errs: &mut Vec<String>| {
            if port == 0 {
                errs.push(format!("{who} has port 0"));
                return;
            }
            match seen.get(&(host.to_string(), port)) {
                Some(prev) => errs.push(format!("{prev} and {who} both use {host}:{port}")),
                None => {
                    seen.insert((host.to_string(), port), who);
                }
            }
        };
        let s = &self.scheduler_endpoint;
        claim(&s.host, s.port, "scheduler".into(), &mut errs);
        for (i, f) in self.frontends.iter().enumerate() {
            claim(&f.host, f.port, format!("frontends[{i}]"), &mut errs);
            claim(&f.host, f.http_port, format!("frontends[{i}].httpPort"), &mut errs);
        }
        for (i, b) in self.backends.iter().enumerate() {
            claim(&b.host, b.port, format!("backends[{i}]"), &mut errs);
            if let Some(p) = b.stats_port {
                claim(&b.host, p, format!("backends[{i}].statsPort"), &mut errs);
            }
            if b.concurrency == Some(0) {
                errs.push(format!("backends[{i}].concurrency must be positive"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::ConfigInvalid(errs))
        }
    }

    /// Where the controller keeps its pid and component table.
    pub fn state_path(&self) -> PathBuf {
        self.data_dir.join(format!("controller-{}.state.json", self.scheduler_endpoint.port))
    }
}

/// Reads and normalizes a config file.
pub fn validate_config(path: impl AsRef<Path>) -> Result<ClusterConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Unreadable { path: path.display().to_string(), message: e.to_string() })?;
    ClusterConfig::from_json(&text, path.parent())
}
