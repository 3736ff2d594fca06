use std::process::ExitStatus;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde_json::json;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio::time::{Instant, MissedTickBehavior};
use tokio_util::sync::CancellationToken;
use tracing::{debug, error, info, warn};

use super::{ControllerError, ControllerOptions, Launcher, ManagedChild, ProcessState, Role, StateFile, Status};
use crate::config::ClusterConfig;
use crate::scheduler::SchedulerClient;
use crate::wire::messages::PongMsg;
use crate::wire::{Envelope, MessageType, ObjectConnection, WireError};

/// Opens a connection, sends `ping` and waits for the matching `pong`.
pub async fn ping_endpoint(addr: &str, timeout: Duration) -> Result<PongMsg, WireError> {
    let attempt = async {
        let mut conn = ObjectConnection::connect(addr).await?;
        let ping = Envelope::new(MessageType::Ping, "hb", &json!({}));
        conn.send(&ping)?;
        while let Some(env) = conn.recv().await {
            let env = env?;
            if env.kind == MessageType::Pong && env.id == ping.id {
                return env.payload_as::<PongMsg>();
            }
        }
        Err(WireError::ConnectionLost)
    };
    tokio::time::timeout(timeout, attempt).await.unwrap_or(Err(WireError::ConnectionLost))
}

#[derive(Debug)]
enum Event {
    Exited { idx: usize, generation: u64, status: ExitStatus },
    Heartbeat { idx: usize, generation: u64, ok: bool },
}

struct Component {
    state: ProcessState,
    host: String,
    port: u16,
    child: Option<Arc<ManagedChild>>,
    generation: u64,
    missed: u32,
    failures: u32,
}

#[derive(Default)]
struct Table {
    comps: Vec<Component>,
    shutting_down: bool,
}

struct Inner {
    config: ClusterConfig,
    launcher: Arc<dyn Launcher>,
    options: ControllerOptions,
    table: Mutex<Table>,
    scheduler: SchedulerClient,
    events: mpsc::UnboundedSender<Event>,
    stop: CancellationToken,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShutdownReport {
    pub stopped: Vec<String>,
    /// Components that ignored SIGTERM for longer than the grace period.
    pub forced_kills: Vec<String>,
    /// False when this call found the cluster already shut down.
    pub performed: bool,
}

/// A running, supervised cluster.
pub struct Controller {
    inner: Arc<Inner>,
    monitor: Mutex<Option<JoinHandle<()>>>,
}

impl Controller {
    /// Starts the scheduler, then the back-ends, then the front-ends, each
    /// group healthy before the next begins, and starts supervising them.
    pub async fn start_all(
        config: ClusterConfig,
        launcher: Arc<dyn Launcher>,
        options: ControllerOptions,
    ) -> Result<Self, ControllerError> {
        config.validate()?;
        let (tx, rx) = mpsc::unbounded_channel();
        let mut table = Table::default();
        let row = |role, index, host: &str, port: u16, external| Component {
            state: ProcessState {
                role,
                index,
                endpoint: format!("{host}:{port}"),
                status: Status::Starting,
                restart_count: 0,
                next_backoff_ms: options.backoff.base_ms,
                pid: None,
                external,
                restart_storm: false,
            },
            host: host.to_string(),
            port,
            child: None,
            generation: 0,
            missed: 0,
            failures: 0,
        };
        let s = &config.scheduler_endpoint;
        table.comps.push(row(Role::Scheduler, 0, &s.host, s.port, false));
        for (i, b) in config.backends.iter().enumerate() {
            table.comps.push(row(Role::Backend, i, &b.host, b.port, b.external));
        }
        for (i, f) in config.frontends.iter().enumerate() {
            table.comps.push(row(Role::Frontend, i, &f.host, f.port, false));
        }
        let inner = Arc::new(Inner {
            scheduler: SchedulerClient::new(config.scheduler_endpoint.address()),
            config,
            launcher,
            options,
            table: Mutex::new(table),
            events: tx,
            stop: CancellationToken::new(),
        });
        let controller = Controller { inner: inner.clone(), monitor: Mutex::new(None) };
        if let Err(e) = controller.start_groups().await {
            controller.shutdown_all().await;
            return Err(e);
        }
        inner.write_state();
        let handle = tokio::spawn(monitor_loop(inner, rx));
        *controller.monitor.lock().expect("monitor lock") = Some(handle);
        Ok(controller)
    }

    async fn start_groups(&self) -> Result<(), ControllerError> {
        let inner = &self.inner;
        for role in [Role::Scheduler, Role::Backend, Role::Frontend] {
            let members = inner.members(role);
            let mut children = Vec::new();
            for &idx in &members {
                let child = if inner.lock().comps[idx].state.external { None } else { Some(inner.launch(idx)?) };
                children.push((idx, child));
            }
            inner.write_state();
            for (idx, child) in children {
                if !inner.await_healthy(idx, child.as_deref()).await {
                    return Err(ControllerError::StartupTimeout {
                        component: inner.lock().comps[idx].state.name(),
                        timeout_ms: inner.config.startup_timeout_ms,
                    });
                }
                if role == Role::Backend {
                    inner.register(idx).await;
                }
                inner.lock().comps[idx].state.status = Status::Running;
                info!(component = %inner.lock().comps[idx].state.name(), "running");
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.inner.config
    }

    pub fn status(&self) -> Vec<ProcessState> {
        self.inner.lock().comps.iter().map(|c| c.state.clone()).collect()
    }

    pub fn state_file(&self) -> StateFile {
        StateFile { controller_pid: std::process::id(), components: self.status() }
    }

    /// Stops front-ends, then back-ends, then the scheduler. External
    /// components are left alone. A second call does nothing.
    pub async fn shutdown_all(&self) -> ShutdownReport {
        let inner = &self.inner;
        {
            let mut table = inner.lock();
            if table.shutting_down {
                return ShutdownReport::default();
            }
            table.shutting_down = true;
        }
        inner.stop.cancel();
        let monitor = self.monitor.lock().expect("monitor lock").take();
        if let Some(handle) = monitor {
            let _ = handle.await;
        }
        let mut report = ShutdownReport { performed: true, ..Default::default() };
        for role in [Role::Frontend, Role::Backend, Role::Scheduler] {
            let members = inner.members(role);
            let targets: Vec<(usize, String, Arc<ManagedChild>)> = {
                let table = inner.lock();
                members
                    .into_iter()
                    .filter_map(|idx| {
                        let c = &table.comps[idx];
                        c.child.clone().filter(|_| !c.state.external).map(|ch| (idx, c.state.name(), ch))
                    })
                    .collect()
            };
            let grace = inner.options.stop_grace;
            let stops = targets.iter().map(|(_, _, child)| async move {
                child.signal(libc::SIGTERM);
                if child.wait(grace).await {
                    false
                } else {
                    child.signal(libc::SIGKILL);
                    child.wait(Duration::from_secs(5)).await;
                    true
                }
            });
            let forced = futures::future::join_all(stops).await;
            let mut table = inner.lock();
            for ((idx, name, _), forced) in targets.into_iter().zip(forced) {
                if forced {
                    warn!(component = %name, "ForcedKill: ignored stop for {grace:?}");
                    report.forced_kills.push(name.clone());
                }
                table.comps[idx].state.status = Status::Stopped;
                report.stopped.push(name);
            }
        }
        if let Some(path) = &inner.options.state_file {
            let _ = std::fs::remove_file(path);
        }
        info!("cluster shut down");
        report
    }
}

impl Drop for Controller {
    fn drop(&mut self) {
        let table = self.inner.lock();
        if !table.shutting_down {
            self.inner.stop.cancel();
            for c in &table.comps {
                if let Some(child) = &c.child {
                    child.signal(libc::SIGKILL);
                }
            }
        }
    }
}

impl Inner {
    fn lock(&self) -> MutexGuard<'_, Table> {
        self.table.lock().expect("controller table lock")
    }

    fn members(&self, role: Role) -> Vec<usize> {
        let table = self.lock();
        (0..table.comps.len()).filter(|&i| table.comps[i].state.role == role).collect()
    }

    fn write_state(&self) {
        let Some(path) = &self.options.state_file else { return };
        let state = StateFile {
            controller_pid: std::process::id(),
            components: self.lock().comps.iter().map(|c| c.state.clone()).collect(),
        };
        if let Err(e) = state.write(path) {
            warn!("cannot write state file {}: {e}", path.display());
        }
    }

    fn launch(&self, idx: usize) -> Result<Arc<ManagedChild>, ControllerError> {
        let (cmd, generation, name) = {
            let mut table = self.lock();
            let c = &mut table.comps[idx];
            c.generation += 1;
            (self.launcher.command(c.state.role, c.state.index), c.generation, c.state.name())
        };
        let events = self.events.clone();
        let child = ManagedChild::spawn(cmd, move |status| {
            let _ = events.send(Event::Exited { idx, generation, status });
        })
        .map_err(|e| ControllerError::Spawn { component: name.clone(), message: e.to_string() })?;
        let child = Arc::new(child);
        let mut table = self.lock();
        if table.shutting_down {
            child.signal(libc::SIGKILL);
            return Err(ControllerError::Spawn { component: name, message: "controller is shutting down".into() });
        }
        let c = &mut table.comps[idx];
        c.state.pid = Some(child.pid());
        c.child = Some(child.clone());
        c.missed = 0;
        debug!(component = %name, pid = child.pid(), "spawned");
        Ok(child)
    }

    /// Pings until the component answers, its process exits, or the startup
    /// timeout passes.
    async fn await_healthy(&self, idx: usize, child: Option<&ManagedChild>) -> bool {
        let addr = self.lock().comps[idx].state.endpoint.clone();
        let deadline = Instant::now() + Duration::from_millis(self.config.startup_timeout_ms);
        while Instant::now() < deadline && !self.stop.is_cancelled() {
            if child.is_some_and(ManagedChild::has_exited) {
                return false;
            }
            if ping_endpoint(&addr, Duration::from_millis(500)).await.is_ok() {
                return true;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        false
    }

    async fn register(&self, idx: usize) {
        let (host, port) = {
            let t = self.lock();
            (t.comps[idx].host.clone(), t.comps[idx].port)
        };
        if let Err(e) = self.scheduler.register(&host, port).await {
            warn!("cannot register {host}:{port} with scheduler: {e}");
        }
    }

    async fn deregister(&self, idx: usize) {
        let (host, port) = {
            let t = self.lock();
            (t.comps[idx].host.clone(), t.comps[idx].port)
        };
        if let Err(e) = self.scheduler.deregister(&host, port).await {
            debug!("deregister {host}:{port}: {e}");
        }
    }

    /// Marks a component dead and hands it to a restart task.
    fn mark_dead(self: &Arc<Self>, table: &mut Table, idx: usize, reason: &str) {
        let c = &mut table.comps[idx];
        c.state.status = Status::Dead;
        c.missed = 0;
        warn!(component = %c.state.name(), "dead: {reason}");
        if let Some(child) = &c.child {
            child.signal(libc::SIGKILL);
        }
        if c.state.external {
            if c.state.role == Role::Backend {
                let inner = self.clone();
                tokio::spawn(async move { inner.deregister(idx).await });
            }
            return;
        }
        c.state.status = Status::Restarting;
        tokio::spawn(restart(self.clone(), idx));
    }
}

async fn restart(inner: Arc<Inner>, idx: usize) {
    let (role, old) = {
        let t = inner.lock();
        (t.comps[idx].state.role, t.comps[idx].child.clone())
    };
    if role == Role::Backend {
        inner.deregister(idx).await;
    }
    if let Some(old) = old {
        old.wait(Duration::from_secs(2)).await;
    }
    inner.write_state();
    loop {
        let delay = inner.lock().comps[idx].state.next_backoff_ms;
        tokio::select! {
            _ = inner.stop.cancelled() => return,
            _ = tokio::time::sleep(Duration::from_millis(delay)) => {}
        }
        {
            let mut t = inner.lock();
            if t.shutting_down {
                return;
            }
            t.comps[idx].state.restart_count += 1;
        }
        let healthy = match inner.launch(idx) {
            Ok(child) => {
                let ok = inner.await_healthy(idx, Some(&child)).await;
                if !ok {
                    child.signal(libc::SIGKILL);
                }
                ok
            }
            Err(e) => {
                warn!("{e}");
                false
            }
        };
        if healthy {
            match role {
                Role::Backend => inner.register(idx).await,
                Role::Scheduler => {
                    for b in inner.members(Role::Backend) {
                        if inner.lock().comps[b].state.status == Status::Running {
                            inner.register(b).await;
                        }
                    }
                }
                _ => {}
            }
            {
                let mut t = inner.lock();
                let c = &mut t.comps[idx];
                c.state.status = Status::Running;
                c.state.next_backoff_ms = inner.options.backoff.base_ms;
                c.failures = 0;
                c.missed = 0;
                info!(component = %c.state.name(), restarts = c.state.restart_count, "restarted");
            }
            inner.write_state();
            return;
        }
        let gave_up = {
            let mut t = inner.lock();
            let c = &mut t.comps[idx];
            c.failures += 1;
            c.state.next_backoff_ms = inner.options.backoff.next(c.state.next_backoff_ms);
            if c.failures >= inner.options.restart_storm_limit {
                c.state.status = Status::Dead;
                c.state.restart_storm = true;
                error!(component = %c.state.name(), "RestartStorm: {} consecutive failed restarts, leaving it dead", c.failures);
                true
            } else {
                false
            }
        };
        inner.write_state();
        if gave_up {
            return;
        }
    }
}

async fn monitor_loop(inner: Arc<Inner>, mut events: mpsc::UnboundedReceiver<Event>) {
    let period = Duration::from_millis(inner.config.heartbeat_interval_ms);
    let mut tick = tokio::time::interval(period);
    tick.set_missed_tick_behavior(MissedTickBehavior::Delay);
    tick.tick().await;
    loop {
        tokio::select! {
            _ = inner.stop.cancelled() => return,
            _ = tick.tick() => {
                let targets: Vec<(usize, u64, String)> = {
                    let t = inner.lock();
                    t.comps
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| c.state.status == Status::Running || (c.state.external && c.state.status == Status::Dead))
                        .map(|(i, c)| (i, c.generation, c.state.endpoint.clone()))
                        .collect()
                };
                for (idx, generation, addr) in targets {
                    let events = inner.events.clone();
                    tokio::spawn(async move {
                        let ok = ping_endpoint(&addr, period).await.is_ok();
                        let _ = events.send(Event::Heartbeat { idx, generation, ok });
                    });
                }
            }
            Some(event) = events.recv() => handle_event(&inner, event),
        }
    }
}

fn handle_event(inner: &Arc<Inner>, event: Event) {
    let mut changed = false;
    {
        let mut t = inner.lock();
        if t.shutting_down {
            return;
        }
        match event {
            Event::Exited { idx, generation, status } => {
                let c = &t.comps[idx];
                if c.generation == generation && c.state.status == Status::Running {
                    inner.mark_dead(&mut t, idx, &format!("process exited ({status})"));
                    changed = true;
                }
            }
            Event::Heartbeat { idx, generation, ok } => {
                let limit = inner.config.missed_heartbeats_before_restart;
                let c = &mut t.comps[idx];
                if c.generation != generation {
                    return;
                }
                match (c.state.status, ok) {
                    (Status::Running, true) => c.missed = 0,
                    (Status::Running, false) => {
                        c.missed += 1;
                        debug!(component = %c.state.name(), missed = c.missed, "heartbeat missed");
                        if c.missed >= limit {
                            let reason = format!("{} heartbeats missed", c.missed);
                            inner.mark_dead(&mut t, idx, &reason);
                            changed = true;
                        }
                    }
                    (Status::Dead, true) if c.state.external => {
                        c.state.status = Status::Running;
                        info!(component = %c.state.name(), "external component is back");
                        if c.state.role == Role::Backend {
                            let inner = inner.clone();
                            tokio::spawn(async move { inner.register(idx).await });
                        }
                        changed = true;
                    }
                    _ => {}
                }
            }
        }
    }
    if changed {
        inner.write_state();
    }
}
