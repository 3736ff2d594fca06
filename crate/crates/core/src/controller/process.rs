use std::io;
use std::path::PathBuf;
use std::process::{ExitStatus, Stdio};
use std::time::Duration;

use tokio::process::Command;
use tokio::sync::watch;

use super::Role;

/// Builds the command that runs one configured component.
pub trait Launcher: Send + Sync {
    fn command(&self, role: Role, index: usize) -> Command;
}

/// Re-invokes the `scatterd` binary with a role subcommand.
#[derive(Debug, Clone)]
pub struct ProcessLauncher {
    pub exe: PathBuf,
    pub config_path: PathBuf,
    pub env: Vec<(String, String)>,
}

impl ProcessLauncher {
    pub fn new(exe: impl Into<PathBuf>, config_path: impl Into<PathBuf>) -> Self {
        Self { exe: exe.into(), config_path: config_path.into(), env: Vec::new() }
    }

    pub fn with_env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.push((key.into(), value.into()));
        self
    }

    /// Uses the currently running executable.
    pub fn current(config_path: impl Into<PathBuf>) -> io::Result<Self> {
        Ok(Self::new(std::env::current_exe()?, config_path))
    }
}

impl Launcher for ProcessLauncher {
    fn command(&self, role: Role, index: usize) -> Command {
        let mut cmd = Command::new(&self.exe);
        cmd.arg(role.as_str()).arg(&self.config_path).envs(self.env.iter().map(|(k, v)| (k, v)));
        if role != Role::Scheduler {
            cmd.arg("--index").arg(index.to_string());
        }
        cmd
    }
}

/// A spawned child whose exit is observed by a background task.
#[derive(Debug)]
pub struct ManagedChild {
    pid: u32,
    exited: watch::Receiver<Option<ExitStatus>>,
}

impl ManagedChild {
    pub fn spawn(mut cmd: Command, on_exit: impl FnOnce(ExitStatus) + Send + 'static) -> io::Result<Self> {
        cmd.stdin(Stdio::null()).kill_on_drop(false);
        let mut child = cmd.spawn()?;
        let pid = child.id().ok_or_else(|| io::Error::other("child exited before it was observed"))?;
        let (tx, rx) = watch::channel(None);
        tokio::spawn(async move {
            let status = match child.wait().await {
                Ok(s) => s,
                Err(_) => return,
            };
            let _ = tx.send(Some(status));
            on_exit(status);
        });
        Ok(Self { pid, exited: rx })
    }

    pub fn pid(&self) -> u32 {
        self.pid
    }

    pub fn exit_status(&self) -> Option<ExitStatus> {
        *self.exited.borrow()
    }

    pub fn has_exited(&self) -> bool {
        self.exit_status().is_some()
    }

    /// Sends `sig` unless the child has already been reaped.
    pub fn signal(&self, sig: i32) -> bool {
        if self.has_exited() {
            return false;
        }
        // SAFETY: kill(2) has no memory-safety preconditions; the pid is
        // still ours because the watcher has not reaped it yet.
        unsafe { libc::kill(self.pid as libc::pid_t, sig) == 0 }
    }

    /// Waits up to `timeout` for the child to exit.
    pub async fn wait(&self, timeout: Duration) -> bool {
        let mut rx = self.exited.clone();
        let exited = tokio::time::timeout(timeout, rx.wait_for(Option::is_some)).await;
        matches!(exited, Ok(Ok(_)))
    }
}

/// True if a process with this pid exists and has not exited (zombies
/// count as exited).
pub fn pid_alive(pid: u32) -> bool {
    if let Ok(stat) = std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        let state = stat.rfind(')').and_then(|i| stat[i + 1..].split_whitespace().next());
        return !matches!(state, Some("Z" | "X"));
    }
    // SAFETY: signal 0 only performs the existence and permission check.
    unsafe { libc::kill(pid as libc::pid_t, 0) == 0 }
}
