//! Process supervisor: starts the scheduler, back-ends and front-ends from a
//! cluster config, heartbeats them, and restarts what dies.

mod process;
mod supervisor;

use std::fmt;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use process::{pid_alive, Launcher, ManagedChild, ProcessLauncher};
pub use supervisor::{ping_endpoint, Controller, ShutdownReport};

use crate::config::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Scheduler,
    Frontend,
    Backend,
    Controller,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Scheduler => "scheduler",
            Role::Frontend => "frontend",
            Role::Backend => "backend",
            Role::Controller => "controller",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Starting,
    Running,
    Dead,
    Restarting,
    Stopped,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::Starting => "starting",
            Status::Running => "running",
            Status::Dead => "dead",
            Status::Restarting => "restarting",
            Status::Stopped => "stopped",
        };
        f.write_str(s)
    }
}

/// One row of the supervision table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProcessState {
    pub role: Role,
    pub index: usize,
    pub endpoint: String,
    pub status: Status,
    pub restart_count: u32,
    pub next_backoff_ms: u64,
    pub pid: Option<u32>,
    pub external: bool,
    /// Set once the component has been given up on.
    #[serde(default)]
    pub restart_storm: bool,
}

impl ProcessState {
    pub fn name(&self) -> String {
        match self.role {
            Role::Scheduler | Role::Controller => self.role.to_string(),
            _ => format!("{}[{}]", self.role, self.index),
        }
    }

    /// `role endpoint status restartCount`, as printed by `controller status`.
    pub fn status_line(&self) -> String {
        let pid = self.pid.map_or("-".to_string(), |p| p.to_string());
        let mut line = format!(
            "{:<10} {:<21} {:<10} {:>3}  pid={pid}",
            self.role.as_str(),
            self.endpoint,
            self.status.to_string(),
            self.restart_count
        );
        if self.external {
            line.push_str(" external");
        }
        if self.restart_storm {
            line.push_str(" restart-storm");
        }
        line
    }
}

/// Exponential restart delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backoff {
    pub base_ms: u64,
    pub cap_ms: u64,
}

impl Default for Backoff {
    fn default() -> Self {
        Self { base_ms: 500, cap_ms: 30_000 }
    }
}

impl Backoff {
    pub fn next(&self, current_ms: u64) -> u64 {
        current_ms.saturating_mul(2).min(self.cap_ms)
    }
}

#[derive(Debug, Clone)]
pub struct ControllerOptions {
    pub backoff: Backoff,
    /// Consecutive failed restarts before a component is left dead.
    pub restart_storm_limit: u32,
    /// How long a component may ignore SIGTERM before it is killed.
    pub stop_grace: Duration,
    /// Where the state file goes; `None` disables it.
    pub state_file: Option<std::path::PathBuf>,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self {
            backoff: Backoff::default(),
            restart_storm_limit: 5,
            stop_grace: Duration::from_secs(10),
            state_file: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    ConfigInvalid(#[from] ConfigError),
    #[error("{component} did not become healthy within {timeout_ms} ms")]
    StartupTimeout { component: String, timeout_ms: u64 },
    #[error("cannot spawn {component}: {message}")]
    Spawn { component: String, message: String },
    #[error("no controller is running for this config (no state file at {0})")]
    NotRunning(String),
    #[error("controller pid {0} did not exit")]
    StopTimeout(u32),
    #[error("state file: {0}")]
    State(String),
}

/// The controller's on-disk view, read by `controller status` and `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StateFile {
    pub controller_pid: u32,
    pub components: Vec<ProcessState>,
}

impl StateFile {
    pub fn read(path: &Path) -> Result<Self, ControllerError> {
        let text =
            std::fs::read_to_string(path).map_err(|_| ControllerError::NotRunning(path.display().to_string()))?;
        serde_json::from_str(&text).map_err(|e| ControllerError::State(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self).expect("state serializes"))?;
        std::fs::rename(tmp, path)
    }

    /// The controller's own row followed by every managed component.
    pub fn census(&self) -> Vec<ProcessState> {
        let me = ProcessState {
            role: Role::Controller,
            index: 0,
            endpoint: "-".into(),
            status: if pid_alive(self.controller_pid) { Status::Running } else { Status::Dead },
            restart_count: 0,
            next_backoff_ms: 0,
            pid: Some(self.controller_pid),
            external: false,
            restart_storm: false,
        };
        std::iter::once(me).chain(self.components.iter().cloned()).collect()
    }
}

/// Sends SIGTERM to the controller recorded in `state_path` and waits for it
/// to exit.
pub async fn stop_running(state_path: &Path, timeout: Duration) -> Result<u32, ControllerError> {
    let state = StateFile::read(state_path)?;
    let pid = state.controller_pid;
    if !pid_alive(pid) {
        let _ = std::fs::remove_file(state_path);
        return Err(ControllerError::NotRunning(state_path.display().to_string()));
    }
    // SAFETY: plain kill(2) call.
    unsafe { libc::kill(pid as libc::pid_t, libc::SIGTERM) };
    let deadline = tokio::time::Instant::now() + timeout;
    while pid_alive(pid) {
        if tokio::time::Instant::now() >= deadline {
            return Err(ControllerError::StopTimeout(pid));
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    Ok(pid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_to_cap() {
        let b = Backoff::default();
        let mut cur = b.base_ms;
        let mut seen = vec![cur];
        for _ in 0..8 {
            cur = b.next(cur);
            seen.push(cur);
        }
        assert_eq!(seen, vec![500, 1000, 2000, 4000, 8000, 16000, 30000, 30000, 30000]);
    }

    #[test]
    fn census_lists_controller_first() {
        let row = |role, index| ProcessState {
            role,
            index,
            endpoint: "127.0.0.1:1".into(),
            status: Status::Running,
            restart_count: 0,
            next_backoff_ms: 500,
            pid: None,
            external: false,
            restart_storm: false,
        };
        let mut components = vec![row(Role::Scheduler, 0), row(Role::Frontend, 0)];
        components.extend((0..4).map(|i| row(Role::Backend, i)));
        let state = StateFile { controller_pid: std::process::id(), components };
        let census = state.census();
        assert_eq!(census.len(), 7);
        assert_eq!(census[0].role, Role::Controller);
        assert_eq!(census[0].status, Status::Running);
        assert_eq!(census.iter().filter(|c| c.role == Role::Backend).count(), 4);
    }

    #[test]
    fn state_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        let state = StateFile { controller_pid: 1, components: vec![] };
        state.write(&path).unwrap();
        assert_eq!(StateFile::read(&path).unwrap(), state);
        assert!(matches!(StateFile::read(&dir.path().join("missing")), Err(ControllerError::NotRunning(_))));
    }
}
