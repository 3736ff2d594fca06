use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use tokio_util::sync::CancellationToken;
use tracing::{error, info};

use scatterd::config::{validate_config, ClusterConfig, ConfigError};
use scatterd::controller::{self, Controller, ControllerError, ControllerOptions, ProcessLauncher, StateFile};
use scatterd::dataset::{generate, parse_day, GenerationConfig};
use scatterd::loadgen::{self, LoadProfile};
use scatterd::node;

#[derive(Parser)]
#[command(name = "scatterd", version, about = "Request-splitting HTTP gateway with supervised worker processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start, stop or inspect a supervised cluster.
    Controller {
        #[command(subcommand)]
        action: ControllerAction,
    },
    /// Run the scheduler described by a cluster config.
    Scheduler { config: PathBuf },
    /// Run one configured front-end.
    Frontend {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Run one configured back-end.
    Backend {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Synthetic satellite measurements.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Load generation and resource sampling.
    Loadgen {
        #[command(subcommand)]
        action: LoadgenAction,
    },
}

#[derive(Subcommand)]
enum ControllerAction {
    /// Start every component and supervise until SIGTERM/SIGINT.
    Start { config: PathBuf },
    /// Stop the controller running for this config.
    Stop { config: PathBuf },
    /// One line per component: role, endpoint, status, restart count.
    Status { config: PathBuf },
}

#[derive(Subcommand)]
enum DatasetAction {
    Generate {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// First day, YYYY-MM-DD.
        #[arg(long)]
        from: String,
        /// Day after the last one generated.
        #[arg(long)]
        to: String,
        #[arg(long, default_value_t = 2000)]
        docs_per_day: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum LoadgenAction {
    Run {
        #[arg(long = "url", required = true)]
        urls: Vec<String>,
        #[arg(long, default_value_t = 1)]
        concurrency: usize,
        #[arg(long, default_value_t = 20)]
        repetitions: usize,
        #[arg(long, default_value_t = 0)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        cooldown: usize,
        /// Ask for gzip-encoded responses.
        #[arg(long)]
        gzip: bool,
        #[arg(long, default_value = "samples.csv")]
        out: PathBuf,
    },
    Monitor {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 2000)]
        interval_ms: u64,
        #[arg(long)]
        duration_ms: u64,
        #[arg(long, default_value = "resources.csv")]
        out: PathBuf,
    },
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
    },
}

fn init_logging() {
    let level = match std::env::var("SCATTERD_LOG_LEVEL").unwrap_or_default().to_ascii_lowercase().as_str() {
        "error" => tracing::Level::ERROR,
        "warn" => tracing::Level::WARN,
        "debug" => tracing::Level::DEBUG,
        _ => tracing::Level::INFO,
    };
    use std::io::IsTerminal;
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_ansi(std::io::stderr().is_terminal())
        .with_writer(std::io::stderr)
        .init();
}

/// Cancelled on SIGTERM or SIGINT.
fn shutdown_on_signal() -> CancellationToken {
    let token = CancellationToken::new();
    let t = token.clone();
    tokio::spawn(async move {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("SIGTERM handler");
        tokio::select! {
            _ = term.recv() => {}
            _ = tokio::signal::ctrl_c() => {}
        }
        t.cancel();
    });
    token
}

fn load_config(path: &Path) -> Result<ClusterConfig, ExitCode> {
    validate_config(path).map_err(|e| {
        match &e {
            ConfigError::ConfigInvalid(diags) => {
                eprintln!("ConfigInvalid: {}", path.display());
                for d in diags {
                    eprintln!("  {d}");
                }
            }
            other => eprintln!("{other}"),
        }
        ExitCode::from(2)
    })
}

fn fail(e: impl std::fmt::Display) -> ExitCode {
    error!("{e}");
    eprintln!("error: {e}");
    ExitCode::FAILURE
}

#[tokio::main]
async fn main() -> ExitCode {
    init_logging();
    match run(Cli::parse().command).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}

async fn run(command: Command) -> Result<(), ExitCode> {
    match command {
        Command::Controller { action } => run_controller(action).await,
        Command::Scheduler { config } => {
            let cfg = load_config(&config)?;
            node::run_scheduler(&cfg, shutdown_on_signal()).await.map_err(fail)
        }
        Command::Frontend { config, index } => {
            let cfg = load_config(&config)?;
            node::run_frontend(&cfg, index, shutdown_on_signal()).await.map_err(fail)
        }
        Command::Backend { config, index } => {
            let cfg = load_config(&config)?;
            node::run_backend(&cfg, index, shutdown_on_signal()).await.map_err(fail)
        }
        Command::Dataset { action: DatasetAction::Generate { seed, from, to, docs_per_day, out } } => {
            let day = |s: &str| -> Result<NaiveDate, ExitCode> { parse_day(s).map_err(fail) };
            let mut cfg = GenerationConfig::new(seed, day(&from)?, day(&to)?);
            cfg.docs_per_day = docs_per_day;
            let dir = out.clone();
            let counts =
                tokio::task::spawn_blocking(move || generate(&cfg, &dir)).await.expect("generator").map_err(fail)?;
            println!("wrote {} days, {} documents to {}", counts.len(), counts.values().sum::<u64>(), out.display());
            Ok(())
        }
        Command::Loadgen { action } => run_loadgen(action).await,
    }
}

async fn run_controller(action: ControllerAction) -> Result<(), ExitCode> {
    match action {
        ControllerAction::Start { config } => {
            let path = std::fs::canonicalize(&config).map_err(fail)?;
            let cfg = load_config(&path)?;
            let state_path = cfg.state_path();
            if let Ok(state) = StateFile::read(&state_path) {
                if controller::pid_alive(state.controller_pid) {
                    return Err(fail(format!(
                        "a controller (pid {}) is already running for this config",
                        state.controller_pid
                    )));
                }
            }
            let shutdown = shutdown_on_signal();
            let launcher = Arc::new(ProcessLauncher::current(&path).map_err(fail)?);
            let options = ControllerOptions { state_file: Some(state_path), ..ControllerOptions::default() };
            let ctl = match Controller::start_all(cfg, launcher, options).await {
                Ok(c) => c,
                Err(e @ ControllerError::ConfigInvalid(_)) => {
                    eprintln!("{e}");
                    return Err(ExitCode::from(2));
                }
                Err(e) => return Err(fail(e)),
            };
            for row in ctl.state_file().census() {
                info!("{}", row.status_line());
            }
            shutdown.cancelled().await;
            let report = ctl.shutdown_all().await;
            if !report.forced_kills.is_empty() {
                eprintln!("ForcedKill: {}", report.forced_kills.join(", "));
            }
            Ok(())
        }
        ControllerAction::Stop { config } => {
            let cfg = load_config(&config)?;
            let pid = controller::stop_running(&cfg.state_path(), Duration::from_secs(60)).await.map_err(fail)?;
            println!("controller {pid} stopped");
            Ok(())
        }
        ControllerAction::Status { config } => {
            let cfg = load_config(&config)?;
            let state = StateFile::read(&cfg.state_path()).map_err(fail)?;
            for row in state.census() {
                println!("{}", row.status_line());
            }
            Ok(())
        }
    }
}

async fn run_loadgen(action: LoadgenAction) -> Result<(), ExitCode> {
    match action {
        LoadgenAction::Run { urls, concurrency, repetitions, warmup, cooldown, gzip, out } => {
            let profile = LoadProfile {
                target_urls: urls,
                concurrency,
                repetitions,
                warmup,
                cooldown,
                gzip,
                ..LoadProfile::new("", concurrency, repetitions)
            };
            let report = loadgen::run_load(&profile).await.map_err(fail)?;
            loadgen::write_samples_csv(&out, &report.samples).map_err(fail)?;
            let mut summary = serde_json::to_value(&report.aggregate).expect("aggregate serializes");
            summary["maxInFlight"] = report.max_in_flight.into();
            println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
            Ok(())
        }
        LoadgenAction::Monitor { config, interval_ms, duration_ms, out } => {
            let cfg = load_config(&config)?;
            let state = StateFile::read(&cfg.state_path()).map_err(fail)?;
            let targets: Vec<(String, u32)> =
                state.census().into_iter().filter_map(|row| row.pid.map(|pid| (row.name(), pid))).collect();
            let log = loadgen::sample_resources(
                &targets,
                Duration::from_millis(interval_ms),
                Duration::from_millis(duration_ms),
            )
            .await;
            loadgen::write_resources_csv(&out, &log).map_err(fail)?;
            for (role, cpu) in loadgen::mean_cpu_by_role(&log.rows) {
                println!("{role:<12} mean cpu {cpu:7.2}%");
            }
            Ok(())
        }
        LoadgenAction::Compare { baseline, candidate } => {
            let cmp = loadgen::compare_runs(&baseline, &candidate).map_err(fail)?;
            println!("{}", serde_json::to_string_pretty(&cmp).expect("json"));
            Ok(())
        }
    }
}
