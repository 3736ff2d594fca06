use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use bytes::Bytes;
use futures::{Stream, StreamExt};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use tracing::{debug, info, warn};

use super::egress::write_record;
use super::merge::{merge_streams, MergeError};
use super::pool::{BackendPool, RouteGuard};
use crate::commander::{self, CommanderError, ExecutionOptions, SubtaskDispatcher};
use crate::registry::{ExecutionMode, QueryParams, Registry, RegistryError, SubTask, UseCase, UseCaseError};
use crate::scheduler::{SchedulerClient, SchedulerError};
use crate::wire::messages::BackendAddr;

pub const DEFAULT_SPLIT_THRESHOLD: u64 = 1_000;
pub const DEFAULT_INFLIGHT: usize = 10;
const BODY_BATCH: usize = 500;

/// How one request will be executed.
#[derive(Debug, Clone)]
pub struct RequestPlan {
    pub usecase: String,
    pub query: QueryParams,
    pub estimated_docs: u64,
    pub split: bool,
    pub subtasks: Vec<SubTask>,
    pub mode: ExecutionMode,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(transparent)]
    UnknownPath(#[from] RegistryError),
    #[error(transparent)]
    BadRequest(UseCaseError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("cannot reach back-end {0}: {1}")]
    BackendUnreachable(String, String),
    #[error(transparent)]
    Commander(#[from] CommanderError),
    #[error(transparent)]
    SubtaskFailed(MergeError),
}

impl GatewayError {
    pub fn status(&self) -> u16 {
        match self {
            GatewayError::UnknownPath(_) => 404,
            GatewayError::BadRequest(_) => 400,
            GatewayError::Scheduler(SchedulerError::NoBackendsAvailable) => 503,
            _ => 502,
        }
    }
}

impl From<UseCaseError> for GatewayError {
    fn from(e: UseCaseError) -> Self {
        GatewayError::BadRequest(e)
    }
}

fn parse_mode(query: &QueryParams) -> Result<ExecutionMode, UseCaseError> {
    query.get("mode").map_or(Ok(ExecutionMode::Concurrent), |m| m.parse())
}

fn distinct_servers(allocation: &[BackendAddr]) -> usize {
    allocation.iter().map(|b| &b.backend_id).collect::<HashSet<_>>().len()
}

/// Decides whether and how to split a request for the given allocation.
///
/// A request is split when its estimated size reaches `split_threshold` and
/// at least two distinct back-ends are allocated. Unsplit requests become a
/// single concurrent sub-task. Sub-task ids are prefixed with `request_id`.
pub fn plan_split(
    usecase: &UseCase,
    query: &QueryParams,
    allocation: &[BackendAddr],
    split_threshold: u64,
    request_id: &str,
) -> Result<RequestPlan, UseCaseError> {
    let estimated_docs = usecase.splitter.estimate(query)?;
    let requested = parse_mode(query)?;
    let servers = distinct_servers(allocation);
    let split = estimated_docs >= split_threshold && servers >= 2;
    let (mode, mut subtasks) = if split {
        (requested, usecase.splitter.split(query, servers, requested)?)
    } else {
        (ExecutionMode::Concurrent, usecase.splitter.split(query, 1, ExecutionMode::Concurrent)?)
    };
    for st in &mut subtasks {
        st.subtask_id = format!("{request_id}:{}", st.subtask_id);
        st.mode = mode;
    }
    Ok(RequestPlan { usecase: usecase.name.clone(), query: query.clone(), estimated_docs, split, subtasks, mode })
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    split_requests: AtomicU64,
    failed: AtomicU64,
    subtasks: AtomicU64,
    records: Arc<AtomicU64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct GatewayStats {
    pub requests: u64,
    pub split_requests: u64,
    pub failed: u64,
    pub subtasks: u64,
    pub records: u64,
    pub active: usize,
    pub backend_connections: usize,
}

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    pub split_threshold: u64,
    pub default_inflight: usize,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        Self { split_threshold: DEFAULT_SPLIT_THRESHOLD, default_inflight: DEFAULT_INFLIGHT }
    }
}

/// A streaming response body: NDJSON bytes, terminated early by an error.
pub type BodyStream = std::pin::Pin<Box<dyn Stream<Item = Result<Bytes, MergeError>> + Send>>;

/// Request handling shared by every HTTP connection of one front-end.
#[derive(Clone)]
pub struct Gateway {
    registry: Registry,
    scheduler: Arc<SchedulerClient>,
    pool: BackendPool,
    options: GatewayOptions,
    counters: Arc<Counters>,
    tag: String,
}

impl Gateway {
    pub fn new(registry: Registry, scheduler: Arc<SchedulerClient>, options: GatewayOptions) -> Self {
        Self {
            registry,
            scheduler,
            pool: BackendPool::new(),
            options,
            counters: Arc::default(),
            tag: format!("fe{}", std::process::id()),
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn stats(&self) -> GatewayStats {
        let c = &self.counters;
        GatewayStats {
            requests: c.requests.load(Ordering::Relaxed),
            split_requests: c.split_requests.load(Ordering::Relaxed),
            failed: c.failed.load(Ordering::Relaxed),
            subtasks: c.subtasks.load(Ordering::Relaxed),
            records: c.records.load(Ordering::Relaxed),
            active: self.pool.active_routes(),
            backend_connections: self.pool.connected(),
        }
    }

    /// Resolves, plans and dispatches a request. Returns once the first
    /// record (or the clean end of an empty result) is known, so failures
    /// before the first byte surface as errors rather than broken bodies.
    pub async fn handle(&self, path: &str, query: &QueryParams) -> Result<BodyStream, GatewayError> {
        let n = self.counters.requests.fetch_add(1, Ordering::Relaxed);
        let request_id = format!("{}-{n}", self.tag);
        let result = self.start(&request_id, path, query).await;
        if result.is_err() {
            self.counters.failed.fetch_add(1, Ordering::Relaxed);
        }
        result
    }

    async fn start(&self, request_id: &str, path: &str, query: &QueryParams) -> Result<BodyStream, GatewayError> {
        let usecase = self.registry.lookup_by_url(path)?;
        let estimate = usecase.splitter.estimate(query)?;
        let want = if estimate >= self.options.split_threshold { None } else { Some(1) };
        let allocation = self.scheduler.allocate(want).await?.servers;
        let plan = plan_split(&usecase, query, &allocation, self.options.split_threshold, request_id)?;
        if plan.split {
            self.counters.split_requests.fetch_add(1, Ordering::Relaxed);
        }
        self.counters.subtasks.fetch_add(plan.subtasks.len() as u64, Ordering::Relaxed);
        let allocation = if plan.split { allocation } else { allocation[..1].to_vec() };
        self.pool
            .ensure(&allocation)
            .await
            .map_err(|(b, e)| GatewayError::BackendUnreachable(b.backend_id, e.to_string()))?;
        let inflight = query.get("inflight").and_then(|v| v.parse().ok()).unwrap_or(self.options.default_inflight);
        let options = match plan.mode {
            ExecutionMode::Concurrent => ExecutionOptions::concurrent(),
            ExecutionMode::Iterative => ExecutionOptions::iterative(inflight),
        };
        info!(
            request = request_id,
            usecase = %plan.usecase,
            estimated = plan.estimated_docs,
            split = plan.split,
            subtasks = plan.subtasks.len(),
            mode = ?plan.mode,
            "dispatching"
        );
        let (inbound, guard) = self.pool.open_route(request_id);
        let ids: Vec<String> = plan.subtasks.iter().map(|s| s.subtask_id.clone()).collect();
        let dispatcher: Arc<dyn SubtaskDispatcher> = Arc::new(self.pool.clone());
        let exec = commander::execute(request_id, plan.subtasks, &allocation, options, dispatcher, inbound)?;
        let mut merged = Box::pin(merge_streams(ids, exec.events));
        let first = match merged.next().await {
            Some(Err(e)) => return Err(GatewayError::SubtaskFailed(e)),
            other => other,
        };
        debug!(request = request_id, "first result ready");
        Ok(body_stream(request_id.to_string(), first, merged, guard, self.counters.records.clone()))
    }
}

type Merged = std::pin::Pin<Box<dyn Stream<Item = Result<Value, MergeError>> + Send>>;

fn body_stream(
    request_id: String,
    first: Option<Result<Value, MergeError>>,
    rest: Merged,
    guard: RouteGuard,
    records: Arc<AtomicU64>,
) -> BodyStream {
    let all: Merged = match first {
        Some(first) => Box::pin(futures::stream::once(async move { first }).chain(rest)),
        None => Box::pin(futures::stream::empty()),
    };
    let batches = all.ready_chunks(BODY_BATCH);
    Box::pin(
        futures::stream::unfold(Some((batches, guard)), move |state| {
            let records = records.clone();
            let request_id = request_id.clone();
            async move {
                let (mut batches, guard) = state?;
                let batch = batches.next().await?;
                let mut buf = Vec::with_capacity(batch.len() * 160);
                for item in batch {
                    match item {
                        Ok(record) => {
                            write_record(&mut buf, &record);
                            records.fetch_add(1, Ordering::Relaxed);
                        }
                        Err(e) => {
                            warn!(request = %request_id, "result stream failed after the first byte: {e}");
                            // terminal error line, then cut the body
                            write_record(&mut buf, &json!({ "error": e.to_string() }));
                            let tail: BodyStream = Box::pin(futures::stream::iter([Ok(Bytes::from(buf)), Err(e)]));
                            drop(guard);
                            return Some((tail, None));
                        }
                    }
                }
                let chunk: BodyStream = Box::pin(futures::stream::once(async move { Ok(Bytes::from(buf)) }));
                Some((chunk, Some((batches, guard))))
            }
        })
        .flatten(),
    )
}
