//! The controller launching a scheduler, two back-ends and a front-end as
//! child processes, restarting a back-end after SIGKILL, then shutting down.
//!
//! Needs the daemon binary next to the examples directory:
//! `cargo build --bin scatterd && cargo run --example supervised_cluster`

use std::sync::Arc;
use std::time::Duration;

use scatterd::config::ClusterConfig;
use scatterd::controller::{Controller, ControllerOptions, ProcessLauncher, Role, Status};
use scatterd::dataset::{generate, GenerationConfig};

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let exe = std::env::current_exe()?.parent().and_then(|p| p.parent()).unwrap().join("scatterd");
    if !exe.exists() {
        return Err(format!("{} not found; run `cargo build --bin scatterd` first", exe.display()).into());
    }
    let dir = tempfile::tempdir()?;
    let day = |d| chrono::NaiveDate::from_ymd_opt(2024, 1, d).unwrap();
    let mut gen = GenerationConfig::new(5, day(1), day(4));
    gen.docs_per_day = 200;
    generate(&gen, dir.path())?;

    let host = "127.0.0.1";
    let cfg = serde_json::json!({
        "schedulerEndpoint": {"host": host, "port": free_port()},
        "frontends": [{"host": host, "port": free_port(), "httpPort": free_port()}],
        "backends": [{"host": host, "port": free_port()}, {"host": host, "port": free_port()}],
        "dataDir": dir.path(),
    });
    let cfg = ClusterConfig::from_json(&cfg.to_string(), None)?;
    let path = dir.path().join("cluster.json");
    std::fs::write(&path, cfg.to_json())?;

    let launcher = Arc::new(ProcessLauncher::new(&exe, &path).with_env("SCATTERD_LOG_LEVEL", "error"));
    let ctl = Controller::start_all(cfg.clone(), launcher, ControllerOptions::default()).await?;
    let show = |title: &str| {
        println!("-- {title}");
        for row in ctl.status() {
            println!("{}", row.status_line());
        }
    };
    show("started");

    let victim = ctl.status().into_iter().find(|r| r.role == Role::Backend).unwrap();
    unsafe { libc::kill(victim.pid.unwrap() as i32, libc::SIGKILL) };
    for _ in 0..100 {
        tokio::time::sleep(Duration::from_millis(50)).await;
        let row = ctl.status().into_iter().find(|r| r.name() == victim.name()).unwrap();
        if row.status == Status::Running && row.restart_count > 0 {
            break;
        }
    }
    show(&format!("after SIGKILL of {}", victim.name()));

    let url = format!("http://{host}:{}/api/cloud-index?from=2024-01-01&to=2024-01-04", cfg.frontends[0].http_port);
    println!("query returned {} records", reqwest::get(&url).await?.text().await?.lines().count());

    let report = ctl.shutdown_all().await;
    println!("stopped {} components, forced kills {:?}", report.stopped.len(), report.forced_kills);
    Ok(())
}
