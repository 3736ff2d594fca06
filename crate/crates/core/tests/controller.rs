mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use scatterd::controller::{
    pid_alive, Backoff, Controller, ControllerError, ControllerOptions, Launcher, ProcessLauncher, ProcessState, Role,
    StateFile, Status,
};

const BIN: &str = env!("CARGO_BIN_EXE_scatterd");

fn launcher(config_path: &std::path::Path) -> Arc<dyn Launcher> {
    Arc::new(ProcessLauncher::new(BIN, config_path).with_env("SCATTERD_LOG_LEVEL", "error"))
}

async fn wait_until(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    while Instant::now() < deadline {
        if f() {
            return true;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    f()
}

fn row(ctl: &Controller, role: Role, index: usize) -> ProcessState {
    ctl.status().into_iter().find(|r| r.role == role && r.index == index).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn census_start_and_idempotent_shutdown() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 1, "2024-01-01", "2024-01-03", 20);
    let cfg = cluster_config(dir.path(), 1, 4);
    let path = write_config(dir.path(), &cfg);
    let state_path = cfg.state_path();
    let options = ControllerOptions { state_file: Some(state_path.clone()), ..Default::default() };
    let ctl = Controller::start_all(cfg, launcher(&path), options).await.unwrap();

    let status = ctl.status();
    assert_eq!(status.len(), 6);
    assert!(status.iter().all(|r| r.status == Status::Running && r.pid.is_some()));
    let census = StateFile::read(&state_path).unwrap().census();
    assert_eq!(census.len(), 7);
    assert_eq!(census[0].role, Role::Controller);

    let pids: Vec<u32> = status.iter().filter_map(|r| r.pid).collect();
    let report = ctl.shutdown_all().await;
    assert!(report.performed);
    assert!(report.forced_kills.is_empty());
    assert_eq!(report.stopped.len(), 6);
    assert!(pids.iter().all(|p| !pid_alive(*p)), "orphans left");
    assert!(!state_path.exists());
    assert!(!ctl.shutdown_all().await.performed);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn killed_backend_is_restarted_and_serves() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 2, "2024-01-01", "2024-01-06", 100);
    let cfg = cluster_config(dir.path(), 1, 2);
    let path = write_config(dir.path(), &cfg);
    let url = format!("http://127.0.0.1:{}/api/cloud-index?from=2024-01-01&to=2024-01-06", cfg.frontends[0].http_port);
    let ctl = Controller::start_all(cfg, launcher(&path), ControllerOptions::default()).await.unwrap();
    let oracle = canonical(serial_oracle(dir.path(), "2024-01-01", "2024-01-06", 0, 1.8));

    let victim = row(&ctl, Role::Backend, 1).pid.unwrap();
    let t = Instant::now();
    sigkill(victim);
    let back = wait_until(Duration::from_secs(5), || {
        let r = row(&ctl, Role::Backend, 1);
        r.status == Status::Running && r.restart_count == 1
    })
    .await;
    assert!(back, "not restarted within 5 s: {:?}", row(&ctl, Role::Backend, 1));
    assert!(t.elapsed() < Duration::from_secs(5));
    assert_ne!(row(&ctl, Role::Backend, 1).pid, Some(victim));

    let got = fetch(&url, false).await;
    assert_eq!(got.status, 200);
    assert_eq!(canonical(parse_ndjson(&got.body)), oracle);
    ctl.shutdown_all().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn hung_backend_is_detected_by_heartbeat() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 2, "2024-01-01", "2024-01-02", 10);
    let mut cfg = cluster_config(dir.path(), 1, 1);
    cfg.heartbeat_interval_ms = 200;
    let path = write_config(dir.path(), &cfg);
    let ctl = Controller::start_all(cfg, launcher(&path), ControllerOptions::default()).await.unwrap();
    let victim = row(&ctl, Role::Backend, 0).pid.unwrap();
    unsafe { libc::kill(victim as i32, libc::SIGSTOP) };
    let back = wait_until(Duration::from_secs(5), || row(&ctl, Role::Backend, 0).restart_count == 1).await;
    assert!(back);
    assert!(wait_until(Duration::from_secs(2), || !pid_alive(victim)).await, "stopped process not killed");
    ctl.shutdown_all().await;
}

/// Spawns the real binary the first time, then a command that exits at once.
struct FlakyLauncher {
    inner: ProcessLauncher,
    launches: AtomicUsize,
}

impl Launcher for FlakyLauncher {
    fn command(&self, role: Role, index: usize) -> tokio::process::Command {
        if role == Role::Backend && self.launches.fetch_add(1, Ordering::SeqCst) > 0 {
            return tokio::process::Command::new("false");
        }
        self.inner.command(role, index)
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn five_failed_restarts_is_a_restart_storm() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 2, "2024-01-01", "2024-01-02", 10);
    let cfg = cluster_config(dir.path(), 1, 1);
    let path = write_config(dir.path(), &cfg);
    let flaky = Arc::new(FlakyLauncher {
        inner: ProcessLauncher::new(BIN, &path).with_env("SCATTERD_LOG_LEVEL", "error"),
        launches: AtomicUsize::new(0),
    });
    let options = ControllerOptions { backoff: Backoff { base_ms: 10, cap_ms: 80 }, ..Default::default() };
    let ctl = Controller::start_all(cfg, flaky, options).await.unwrap();
    sigkill(row(&ctl, Role::Backend, 0).pid.unwrap());
    let dead = wait_until(Duration::from_secs(10), || row(&ctl, Role::Backend, 0).restart_storm).await;
    assert!(dead);
    let r = row(&ctl, Role::Backend, 0);
    assert_eq!((r.status, r.restart_count), (Status::Dead, 5));
    assert_eq!(r.next_backoff_ms, 80);
    // the rest of the cluster carries on
    assert_eq!(row(&ctl, Role::Frontend, 0).status, Status::Running);
    ctl.shutdown_all().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn external_backend_is_monitored_not_spawned() {
    use scatterd::backend::{BackendOptions, BackendServer};
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 2, "2024-01-01", "2024-01-02", 10);
    let mut cfg = cluster_config(dir.path(), 1, 2);
    cfg.heartbeat_interval_ms = 200;
    cfg.backends[1].external = true;
    let path = write_config(dir.path(), &cfg);

    let registry = scatterd::node::default_registry(dir.path()).unwrap();
    let ext = BackendServer::bind(format!("127.0.0.1:{}", cfg.backends[1].port), registry, BackendOptions::default())
        .await
        .unwrap();
    let ext_stop = tokio_util::sync::CancellationToken::new();
    let ext_task = tokio::spawn(ext.run(ext_stop.clone()));

    let ctl = Controller::start_all(cfg, launcher(&path), ControllerOptions::default()).await.unwrap();
    let r = row(&ctl, Role::Backend, 1);
    assert_eq!((r.status, r.pid, r.external), (Status::Running, None, true));

    ext_stop.cancel();
    let _ = ext_task.await;
    assert!(wait_until(Duration::from_secs(5), || row(&ctl, Role::Backend, 1).status == Status::Dead).await);
    tokio::time::sleep(Duration::from_millis(600)).await;
    let r = row(&ctl, Role::Backend, 1);
    assert_eq!((r.status, r.restart_count, r.pid), (Status::Dead, 0, None));
    ctl.shutdown_all().await;
}

#[tokio::test]
async fn zero_backends_is_config_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = cluster_config(dir.path(), 1, 1);
    cfg.backends.clear();
    let err = Controller::start_all(cfg, launcher(dir.path()), ControllerOptions::default()).await.err().unwrap();
    assert!(matches!(err, ControllerError::ConfigInvalid(_)), "{err}");
}

#[test]
fn cli_start_reports_config_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"schedulerEndpoint":{"host":"127.0.0.1","port":7000},"frontends":[{"host":"127.0.0.1","port":7000,"httpPort":8080}],"backends":[],"dataDir":"."}"#,
    )
    .unwrap();
    let out = std::process::Command::new(BIN).args(["controller", "start"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ConfigInvalid"), "{stderr}");
    assert!(stderr.contains("back-end"), "{stderr}");
    assert!(stderr.contains("7000"), "{stderr}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cli_start_status_stop() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 1, "2024-01-01", "2024-01-02", 10);
    let cfg = cluster_config(dir.path(), 1, 2);
    let path = write_config(dir.path(), &cfg);
    let mut ctl = std::process::Command::new(BIN)
        .args(["controller", "start"])
        .arg(&path)
        .env("SCATTERD_LOG_LEVEL", "error")
        .spawn()
        .unwrap();
    let status = || std::process::Command::new(BIN).args(["controller", "status"]).arg(&path).output().unwrap();
    let ready = wait_until(Duration::from_secs(15), || {
        let out = status();
        let text = String::from_utf8_lossy(&out.stdout).to_string();
        out.status.success() && text.lines().count() == 5 && text.lines().all(|l| l.contains("running"))
    })
    .await;
    assert!(ready, "{}", String::from_utf8_lossy(&status().stdout));
    let stop = std::process::Command::new(BIN).args(["controller", "stop"]).arg(&path).output().unwrap();
    assert!(stop.status.success(), "{}", String::from_utf8_lossy(&stop.stderr));
    assert!(ctl.wait().unwrap().success());
    assert!(!status().status.success());
}
