//! Worker process: executes use-case handlers for sub-tasks and streams the
//! records back as `chunk` envelopes closed by one `end` or `error`.

mod sink;

pub use sink::{ChunkSink, CHUNK_RECORDS};

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::Semaphore;
use tokio_util::sync::CancellationToken;
use tracing::{debug, info, warn};

use crate::registry::Registry;
use crate::scheduler::SchedulerClient;
use crate::wire::messages::{ErrorMsg, PongMsg, SlotMsg, SubtaskMsg};
use crate::wire::{Envelope, MessageType, ObjectConnection, ObjectSender};

/// Counters served on `/stats` and in `pong` replies.
#[derive(Debug, Default)]
pub struct BackendStats {
    running: AtomicUsize,
    peak_running: AtomicUsize,
    completed: AtomicU64,
    failed: AtomicU64,
    records_emitted: AtomicU64,
    done_received: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StatsSnapshot {
    pub running: usize,
    pub peak_running: usize,
    pub completed: u64,
    pub failed: u64,
    pub records_emitted: u64,
    pub done_received: u64,
}

impl BackendStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            running: self.running.load(Ordering::SeqCst),
            peak_running: self.peak_running.load(Ordering::SeqCst),
            completed: self.completed.load(Ordering::SeqCst),
            failed: self.failed.load(Ordering::SeqCst),
            records_emitted: self.records_emitted.load(Ordering::SeqCst),
            done_received: self.done_received.load(Ordering::SeqCst),
        }
    }

    fn start(&self) {
        let now = self.running.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_running.fetch_max(now, Ordering::SeqCst);
    }

    fn finish(&self, ok: bool, records: u64) {
        self.running.fetch_sub(1, Ordering::SeqCst);
        self.records_emitted.fetch_add(records, Ordering::SeqCst);
        if ok {
            self.completed.fetch_add(1, Ordering::SeqCst);
        } else {
            self.failed.fetch_add(1, Ordering::SeqCst);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackendOptions {
    /// Address announced to the scheduler; defaults to the bound address.
    pub advertise_host: Option<String>,
    pub scheduler: Option<String>,
    /// Simultaneous handler executions; defaults to the visible CPU count.
    pub concurrency: usize,
    pub register_interval: Duration,
}

impl Default for BackendOptions {
    fn default() -> Self {
        Self {
            advertise_host: None,
            scheduler: None,
            concurrency: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            register_interval: Duration::from_secs(1),
        }
    }
}

pub struct BackendServer {
    listener: TcpListener,
    registry: Registry,
    options: BackendOptions,
    stats: Arc<BackendStats>,
    slots: Arc<Semaphore>,
}

impl BackendServer {
    pub async fn bind(
        addr: impl tokio::net::ToSocketAddrs,
        registry: Registry,
        options: BackendOptions,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let slots = Arc::new(Semaphore::new(options.concurrency.max(1)));
        Ok(Self { listener, registry, options, stats: Arc::default(), slots })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn stats(&self) -> Arc<BackendStats> {
        self.stats.clone()
    }

    pub async fn run(self, shutdown: CancellationToken) {
        let addr = self.local_addr();
        info!(%addr, concurrency = self.options.concurrency, "backend listening");
        if let Some(endpoint) = self.options.scheduler.clone() {
            let host = self.options.advertise_host.clone().unwrap_or_else(|| addr.ip().to_string());
            tokio::spawn(registration_loop(
                endpoint,
                host,
                addr.port(),
                self.options.register_interval,
                shutdown.clone(),
            ));
        }
        let ctx = Arc::new(Ctx {
            registry: self.registry,
            stats: self.stats.clone(),
            slots: self.slots,
            shutdown: shutdown.clone(),
        });
        loop {
            tokio::select! {
                _ = shutdown.cancelled() => break,
                accepted = self.listener.accept() => match accepted {
                    Ok((stream, peer)) => {
                        debug!(%peer, "backend connection");
                        tokio::spawn(serve_connection(ObjectConnection::from_stream(stream), ctx.clone()));
                    }
                    Err(e) => warn!("accept failed: {e}"),
                }
            }
        }
        // drain running handlers before exiting
        let deadline = tokio::time::Instant::now() + Duration::from_secs(10);
        while self.stats.running.load(Ordering::SeqCst) > 0 && tokio::time::Instant::now() < deadline {
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        info!("backend stopped");
    }
}

/// Registers with the scheduler, then re-announces periodically so a
/// restarted scheduler relearns this back-end.
async fn registration_loop(endpoint: String, host: String, port: u16, every: Duration, shutdown: CancellationToken) {
    let client = SchedulerClient::new(endpoint);
    let mut announced = false;
    loop {
        match client.register(&host, port).await {
            Ok(_) if !announced => {
                info!(scheduler = client.endpoint(), "registered as {host}:{port}");
                announced = true;
            }
            Ok(_) => {}
            Err(e) => {
                debug!("registration failed: {e}");
                announced = false;
            }
        }
        tokio::select! {
            _ = shutdown.cancelled() => return,
            _ = tokio::time::sleep(if announced { every } else { Duration::from_millis(100) }) => {}
        }
    }
}

struct Ctx {
    registry: Registry,
    stats: Arc<BackendStats>,
    slots: Arc<Semaphore>,
    shutdown: CancellationToken,
}

async fn serve_connection(conn: ObjectConnection, ctx: Arc<Ctx>) {
    let (sender, mut receiver) = conn.split();
    let conn_gone = CancellationToken::new();
    loop {
        let env = tokio::select! {
            _ = ctx.shutdown.cancelled() => break,
            msg = receiver.recv() => match msg {
                Some(Ok(env)) => env,
                Some(Err(e)) => {
                    debug!("backend connection dropped: {e}");
                    break;
                }
                None => break,
            },
        };
        match env.kind {
            MessageType::Subtask => match env.payload_as::<SubtaskMsg>() {
                Ok(msg) => {
                    tokio::spawn(execute(msg, sender.clone(), ctx.clone(), conn_gone.clone()));
                }
                Err(e) => {
                    let _ = sender.send(&env.reply(
                        MessageType::Error,
                        &ErrorMsg { request_id: None, subtask_id: None, message: e.to_string() },
                    ));
                }
            },
            MessageType::Done => {
                ctx.stats.done_received.fetch_add(1, Ordering::SeqCst);
            }
            MessageType::Ping => {
                let pong =
                    PongMsg { role: "backend".into(), pid: std::process::id(), stats: json!(ctx.stats.snapshot()) };
                let _ = sender.send(&env.reply(MessageType::Pong, &pong));
            }
            MessageType::Stop => {
                let _ = sender.send(&env.reply(MessageType::Done, &json!({})));
                ctx.shutdown.cancel();
            }
            other => {
                let msg = ErrorMsg {
                    request_id: None,
                    subtask_id: None,
                    message: format!("backend does not handle {other}"),
                };
                let _ = sender.send(&env.reply(MessageType::Error, &msg));
            }
        }
    }
    conn_gone.cancel();
}

async fn execute(msg: SubtaskMsg, sender: ObjectSender, ctx: Arc<Ctx>, conn_gone: CancellationToken) {
    let SubtaskMsg { request_id, subtask, worker_slot_id } = msg;
    let subtask_id = subtask.subtask_id.clone();
    let usecase = match ctx.registry.lookup_by_name(&subtask.usecase_name) {
        Ok(uc) => uc,
        Err(e) => {
            let err = ErrorMsg {
                request_id: Some(request_id.clone()),
                subtask_id: Some(subtask_id.clone()),
                message: e.to_string(),
            };
            let _ = sender.send(&Envelope::new(MessageType::Error, subtask_id, &err));
            pull_next(&sender, &request_id, worker_slot_id);
            return;
        }
    };
    let Ok(_permit) = ctx.slots.clone().acquire_owned().await else { return };
    if conn_gone.is_cancelled() {
        return;
    }
    ctx.stats.start();
    let mut sink = ChunkSink::new(sender.clone(), request_id.clone(), subtask_id.clone(), conn_gone);
    let handler = usecase.handler.clone();
    let params = subtask.params;
    let (result, mut sink) = tokio::task::spawn_blocking(move || {
        let r = handler.handle(&params, &mut sink);
        (r, sink)
    })
    .await
    .expect("handler task panicked");
    let outcome = result.and_then(|_| sink.finish());
    let emitted = sink.emitted();
    match outcome {
        Ok(count) => {
            ctx.stats.finish(true, emitted);
            debug!(subtask = %subtask_id, records = count, "subtask complete");
        }
        Err(e) => {
            ctx.stats.finish(false, emitted);
            if sink.is_lost() {
                // connection is gone; nothing more can be sent
                return;
            }
            let err = ErrorMsg {
                request_id: Some(request_id.clone()),
                subtask_id: Some(subtask_id.clone()),
                message: e.to_string(),
            };
            let _ = sender.send(&Envelope::new(MessageType::Error, subtask_id, &err));
        }
    }
    pull_next(&sender, &request_id, worker_slot_id);
}

/// Iterative mode: ask the front-end for this slot's next sub-task.
fn pull_next(sender: &ObjectSender, request_id: &str, worker_slot_id: Option<String>) {
    if let Some(slot) = worker_slot_id {
        let msg = SlotMsg { request_id: request_id.to_string(), worker_slot_id: slot.clone() };
        let _ = sender.send(&Envelope::new(MessageType::Next, slot, &msg));
    }
}

/// Serves `GET /stats` with the counters as JSON.
pub async fn serve_stats(listener: TcpListener, stats: Arc<BackendStats>, shutdown: CancellationToken) {
    use axum::routing::get;
    let app = axum::Router::new().route(
        "/stats",
        get(move || {
            let stats = stats.clone();
            async move { axum::Json(stats.snapshot()) }
        }),
    );
    let _ = axum::serve(listener, app).with_graceful_shutdown(shutdown.cancelled_owned()).await;
}
