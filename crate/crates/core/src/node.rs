//! Entry points that run one component from a cluster config.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::net::TcpListener;
use tokio_util::sync::CancellationToken;

use crate::backend::{serve_stats, BackendOptions, BackendServer};
use crate::config::ClusterConfig;
use crate::dataset::{cloud_index_use_case, DatasetError, Store};
use crate::frontend::{serve_control, Gateway, GatewayOptions, HttpServer};
use crate::registry::{Registry, RegistryError};
use crate::scheduler::{SchedulerClient, SchedulerServer};

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("cannot bind {0}: {1}")]
    Bind(String, std::io::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("no {role} at index {index} in config")]
    NoSuchComponent { role: &'static str, index: usize },
}

/// The use cases every front-end and back-end loads: cloud-index over the
/// store in `data_dir`.
pub fn default_registry(data_dir: &Path) -> Result<Registry, NodeError> {
    let store = Arc::new(Store::open(data_dir)?);
    let registry = Registry::new();
    registry.register(cloud_index_use_case(store))?;
    Ok(registry)
}

async fn bind(addr: String) -> Result<TcpListener, NodeError> {
    TcpListener::bind(&addr).await.map_err(|e| NodeError::Bind(addr, e))
}

pub async fn run_scheduler(cfg: &ClusterConfig, shutdown: CancellationToken) -> Result<(), NodeError> {
    let addr = cfg.scheduler_endpoint.address();
    let server = SchedulerServer::bind(&addr).await.map_err(|e| NodeError::Bind(addr, e))?;
    server.run(shutdown).await;
    Ok(())
}

pub async fn run_backend(cfg: &ClusterConfig, index: usize, shutdown: CancellationToken) -> Result<(), NodeError> {
    let b = cfg.backends.get(index).ok_or(NodeError::NoSuchComponent { role: "backend", index })?;
    let registry = default_registry(&cfg.data_dir)?;
    let mut options = BackendOptions {
        advertise_host: Some(b.host.clone()),
        scheduler: Some(cfg.scheduler_endpoint.address()),
        register_interval: Duration::from_millis(cfg.heartbeat_interval_ms),
        ..BackendOptions::default()
    };
    if let Some(c) = b.concurrency {
        options.concurrency = c;
    }
    let addr = format!("{}:{}", b.host, b.port);
    let server = BackendServer::bind(&addr, registry, options).await.map_err(|e| NodeError::Bind(addr, e))?;
    if let Some(port) = b.stats_port {
        let listener = bind(format!("{}:{port}", b.host)).await?;
        tokio::spawn(serve_stats(listener, server.stats(), shutdown.clone()));
    }
    server.run(shutdown).await;
    Ok(())
}

pub async fn run_frontend(cfg: &ClusterConfig, index: usize, shutdown: CancellationToken) -> Result<(), NodeError> {
    let f = cfg.frontends.get(index).ok_or(NodeError::NoSuchComponent { role: "frontend", index })?;
    let registry = default_registry(&cfg.data_dir)?;
    let scheduler = Arc::new(SchedulerClient::new(cfg.scheduler_endpoint.address()));
    let options = GatewayOptions { split_threshold: cfg.split_threshold, default_inflight: cfg.default_inflight };
    let gateway = Gateway::new(registry, scheduler, options);
    let control = bind(format!("{}:{}", f.host, f.port)).await?;
    let addr = format!("{}:{}", f.host, f.http_port);
    let http = HttpServer::bind(&addr, gateway.clone()).await.map_err(|e| NodeError::Bind(addr, e))?;
    tokio::spawn(serve_control(control, gateway, shutdown.clone()));
    let _ = http.run(shutdown).await;
    Ok(())
}
