//! Whole clusters inside one process, on ephemeral loopback ports.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use tokio_util::sync::CancellationToken;

use crate::backend::{BackendOptions, BackendServer, BackendStats};
use crate::frontend::{Gateway, GatewayOptions, HttpServer};
use crate::node::{default_registry, NodeError};
use crate::scheduler::{SchedulerClient, SchedulerServer};

#[derive(Debug, Clone)]
pub struct LocalClusterOptions {
    pub data_dir: PathBuf,
    pub backends: usize,
    pub split_threshold: u64,
    pub default_inflight: usize,
    /// Handler slots per back-end.
    pub backend_concurrency: usize,
}

impl LocalClusterOptions {
    pub fn new(data_dir: impl Into<PathBuf>, backends: usize) -> Self {
        Self {
            data_dir: data_dir.into(),
            backends,
            split_threshold: crate::frontend::DEFAULT_SPLIT_THRESHOLD,
            default_inflight: crate::frontend::DEFAULT_INFLIGHT,
            backend_concurrency: BackendOptions::default().concurrency,
        }
    }
}

pub struct LocalBackend {
    pub addr: SocketAddr,
    pub stats: Arc<BackendStats>,
    shutdown: CancellationToken,
}

/// Scheduler, back-ends and one front-end running as tasks on the current
/// runtime. Dropping the cluster stops everything.
pub struct LocalCluster {
    pub http_addr: SocketAddr,
    pub scheduler_addr: SocketAddr,
    pub backends: Vec<LocalBackend>,
    pub gateway: Gateway,
    shutdown: CancellationToken,
}

impl LocalCluster {
    pub async fn start(options: LocalClusterOptions) -> Result<Self, NodeError> {
        let shutdown = CancellationToken::new();
        let scheduler =
            SchedulerServer::bind("127.0.0.1:0").await.map_err(|e| NodeError::Bind("127.0.0.1:0".into(), e))?;
        let scheduler_addr = scheduler.local_addr();
        let state = scheduler.state();
        tokio::spawn(scheduler.run(shutdown.clone()));

        let mut backends = Vec::new();
        for _ in 0..options.backends {
            let registry = default_registry(&options.data_dir)?;
            let bo = BackendOptions {
                scheduler: Some(scheduler_addr.to_string()),
                concurrency: options.backend_concurrency,
                register_interval: Duration::from_millis(500),
                ..BackendOptions::default()
            };
            let server = BackendServer::bind("127.0.0.1:0", registry, bo)
                .await
                .map_err(|e| NodeError::Bind("127.0.0.1:0".into(), e))?;
            let token = shutdown.child_token();
            backends.push(LocalBackend { addr: server.local_addr(), stats: server.stats(), shutdown: token.clone() });
            tokio::spawn(server.run(token));
        }
        // registration happens in the background; wait for all of it
        let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
        while state.lock().expect("scheduler lock").len() < options.backends && tokio::time::Instant::now() < deadline {
            tokio::time::sleep(Duration::from_millis(10)).await;
        }

        let registry = default_registry(&options.data_dir)?;
        let client = Arc::new(SchedulerClient::new(scheduler_addr.to_string()));
        let go =
            GatewayOptions { split_threshold: options.split_threshold, default_inflight: options.default_inflight };
        let gateway = Gateway::new(registry, client, go);
        let http = HttpServer::bind("127.0.0.1:0", gateway.clone())
            .await
            .map_err(|e| NodeError::Bind("127.0.0.1:0".into(), e))?;
        let http_addr = http.local_addr();
        tokio::spawn(http.run(shutdown.clone()));
        Ok(Self { http_addr, scheduler_addr, backends, gateway, shutdown })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.http_addr)
    }

    /// Stops one back-end's listener and open connections.
    pub fn stop_backend(&self, index: usize) {
        self.backends[index].shutdown.cancel();
    }

    pub fn shutdown(&self) {
        self.shutdown.cancel();
    }
}

impl Drop for LocalCluster {
    fn drop(&mut self) {
        self.shutdown.cancel();
    }
}
