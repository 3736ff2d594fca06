//! Parallel execution of one request's sub-tasks over allocated back-ends.
//!
//! Two paradigms share one driver:
//!
//! * **concurrent**: sub-task `i` goes to `allocation[i mod m]` up front;
//! * **iterative**: every back-end gets `per_server_inflight` worker slots;
//!   each slot is seeded with one sub-task and pulls the next with a `next`
//!   envelope once it finishes, until the queue is empty and it is told `done`.
//!
//! The commander owns the [`DispatchLedger`]. Result chunks pass straight
//! through to the merger as [`MergeEvent`]s.

mod ledger;
pub mod simulated;

pub use ledger::{DispatchLedger, LedgerError, LedgerReport, Terminal};

use std::collections::HashMap;
use std::sync::Arc;

use serde_json::Value;
use thiserror::Error;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tracing::{debug, warn};

use crate::registry::{ExecutionMode, SubTask};
use crate::wire::messages::{BackendAddr, ChunkMsg, EndMsg, ErrorMsg, SlotMsg, SubtaskMsg};
use crate::wire::{Envelope, MessageType, WireError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecutionOptions {
    pub mode: ExecutionMode,
    /// Iterative only: worker slots per back-end.
    pub per_server_inflight: usize,
    /// Re-check the ledger invariants after every transition.
    pub audit: bool,
}

impl ExecutionOptions {
    pub fn concurrent() -> Self {
        Self { mode: ExecutionMode::Concurrent, per_server_inflight: 1, audit: false }
    }

    pub fn iterative(per_server_inflight: usize) -> Self {
        Self { mode: ExecutionMode::Iterative, per_server_inflight, audit: false }
    }

    pub fn audited(self) -> Self {
        Self { audit: true, ..self }
    }

    /// Total worker slots for `servers` distinct back-ends.
    pub fn required_slots(&self, servers: usize) -> usize {
        match self.mode {
            ExecutionMode::Concurrent => 0,
            ExecutionMode::Iterative => servers * self.per_server_inflight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommanderError {
    #[error("allocation is empty")]
    EmptyAllocation,
    #[error("no sub-tasks to execute")]
    NoSubtasks,
    #[error("per-server inflight must be at least 1")]
    ZeroInflight,
}

/// Sends envelopes to back-ends. Implementations must not block.
pub trait SubtaskDispatcher: Send + Sync {
    fn dispatch(&self, backend: &BackendAddr, env: Envelope) -> Result<(), WireError>;
}

/// Back-end traffic for one request, already demultiplexed by request id.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendEvent {
    Chunk(ChunkMsg),
    End(EndMsg),
    Error(ErrorMsg),
    Next(SlotMsg),
    Lost { backend_id: String },
}

impl BackendEvent {
    /// Maps a result-bearing envelope to an event; other kinds yield `None`.
    pub fn from_envelope(env: &Envelope) -> Result<Option<(String, BackendEvent)>, WireError> {
        Ok(Some(match env.kind {
            MessageType::Chunk => {
                let m: ChunkMsg = env.payload_as()?;
                (m.request_id.clone(), BackendEvent::Chunk(m))
            }
            MessageType::End => {
                let m: EndMsg = env.payload_as()?;
                (m.request_id.clone(), BackendEvent::End(m))
            }
            MessageType::Error => {
                let m: ErrorMsg = env.payload_as()?;
                match m.request_id.clone() {
                    Some(rid) => (rid, BackendEvent::Error(m)),
                    None => return Ok(None),
                }
            }
            MessageType::Next => {
                let m: SlotMsg = env.payload_as()?;
                (m.request_id.clone(), BackendEvent::Next(m))
            }
            _ => return Ok(None),
        }))
    }
}

/// What the merger sees: chunks in arrival order plus one terminal per sub-task.
#[derive(Debug, Clone, PartialEq)]
pub enum MergeEvent {
    Chunk { subtask_id: String, seq: u64, records: Vec<Value> },
    End { subtask_id: String, record_count: u64 },
    Failed { subtask_id: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecutionReport {
    pub ledger: LedgerReport,
    /// Ledger invariant breaches seen while auditing.
    pub invariant_violations: usize,
    /// Unexpected `next` envelopes (after `done`, or for unknown slots).
    pub protocol_violations: usize,
    /// `done` envelopes sent, per back-end.
    pub done_sent: HashMap<String, usize>,
}

pub struct Execution {
    pub events: mpsc::UnboundedReceiver<MergeEvent>,
    pub handle: JoinHandle<ExecutionReport>,
}

/// Dispatches every sub-task immediately, round-robin over `allocation`.
pub fn execute_concurrent(
    request_id: &str,
    subtasks: Vec<SubTask>,
    allocation: &[BackendAddr],
    dispatcher: Arc<dyn SubtaskDispatcher>,
    inbound: mpsc::UnboundedReceiver<BackendEvent>,
) -> Result<Execution, CommanderError> {
    execute(request_id, subtasks, allocation, ExecutionOptions::concurrent(), dispatcher, inbound)
}

/// Runs the worker-pull paradigm with `per_server_inflight` slots per back-end.
pub fn execute_iterative(
    request_id: &str,
    subtasks: Vec<SubTask>,
    allocation: &[BackendAddr],
    per_server_inflight: usize,
    dispatcher: Arc<dyn SubtaskDispatcher>,
    inbound: mpsc::UnboundedReceiver<BackendEvent>,
) -> Result<Execution, CommanderError> {
    execute(request_id, subtasks, allocation, ExecutionOptions::iterative(per_server_inflight), dispatcher, inbound)
}

pub fn execute(
    request_id: &str,
    subtasks: Vec<SubTask>,
    allocation: &[BackendAddr],
    options: ExecutionOptions,
    dispatcher: Arc<dyn SubtaskDispatcher>,
    inbound: mpsc::UnboundedReceiver<BackendEvent>,
) -> Result<Execution, CommanderError> {
    if allocation.is_empty() {
        return Err(CommanderError::EmptyAllocation);
    }
    if subtasks.is_empty() {
        return Err(CommanderError::NoSubtasks);
    }
    if options.mode == ExecutionMode::Iterative && options.per_server_inflight == 0 {
        return Err(CommanderError::ZeroInflight);
    }
    let (out, events) = mpsc::unbounded_channel();
    let mut driver = Driver {
        request_id: request_id.to_string(),
        options,
        ledger: DispatchLedger::new(subtasks),
        dispatcher,
        out,
        slots: HashMap::new(),
        slot_order: Vec::new(),
        slot_of: HashMap::new(),
        report: ExecutionReport::default(),
    };
    let allocation = allocation.to_vec();
    let handle = tokio::spawn(async move { driver.run(allocation, inbound).await });
    Ok(Execution { events, handle })
}

struct Slot {
    backend: BackendAddr,
    current: Option<String>,
    retired: bool,
}

struct Driver {
    request_id: String,
    options: ExecutionOptions,
    ledger: DispatchLedger,
    dispatcher: Arc<dyn SubtaskDispatcher>,
    out: mpsc::UnboundedSender<MergeEvent>,
    slots: HashMap<String, Slot>,
    slot_order: Vec<String>,
    slot_of: HashMap<String, String>,
    report: ExecutionReport,
}

impl Driver {
    async fn run(
        &mut self,
        allocation: Vec<BackendAddr>,
        mut inbound: mpsc::UnboundedReceiver<BackendEvent>,
    ) -> ExecutionReport {
        match self.options.mode {
            ExecutionMode::Concurrent => self.seed_concurrent(&allocation),
            ExecutionMode::Iterative => self.seed_iterative(&allocation),
        }
        while !self.ledger.is_finished() && !self.out.is_closed() {
            let Some(event) = inbound.recv().await else {
                self.abandon("back-end event stream closed");
                break;
            };
            self.on_event(event);
            self.audit();
        }
        self.retire_idle_slots();
        debug!(request = %self.request_id, "commander finished");
        let mut report = std::mem::take(&mut self.report);
        report.ledger = self.ledger.report();
        report
    }

    fn seed_concurrent(&mut self, allocation: &[BackendAddr]) {
        let mut i = 0;
        while let Some(task) = self.ledger.pop_queued() {
            let backend = allocation[i % allocation.len()].clone();
            self.send_subtask(task, &backend, None);
            self.audit();
            i += 1;
        }
    }

    fn seed_iterative(&mut self, allocation: &[BackendAddr]) {
        let mut servers: Vec<BackendAddr> = Vec::new();
        for b in allocation {
            if !servers.iter().any(|s| s.backend_id == b.backend_id) {
                servers.push(b.clone());
            }
        }
        for k in 0..self.options.per_server_inflight {
            for backend in &servers {
                let slot_id = format!("{}/{}#{k}", self.request_id, backend.backend_id);
                self.slots.insert(slot_id.clone(), Slot { backend: backend.clone(), current: None, retired: false });
                self.slot_order.push(slot_id);
            }
        }
        for slot_id in self.slot_order.clone() {
            self.give_work(&slot_id);
            self.audit();
        }
    }

    fn send_subtask(&mut self, task: SubTask, backend: &BackendAddr, slot_id: Option<&str>) {
        let subtask_id = task.subtask_id.clone();
        self.ledger.assign(&subtask_id, &backend.backend_id).expect("popped sub-task assigns once");
        if let Some(slot_id) = slot_id {
            self.slot_of.insert(subtask_id.clone(), slot_id.to_string());
            if let Some(slot) = self.slots.get_mut(slot_id) {
                slot.current = Some(subtask_id.clone());
            }
        }
        let msg = SubtaskMsg {
            request_id: self.request_id.clone(),
            subtask: task,
            worker_slot_id: slot_id.map(String::from),
        };
        let env = Envelope::new(MessageType::Subtask, subtask_id.clone(), &msg);
        if let Err(e) = self.dispatcher.dispatch(backend, env) {
            warn!(backend = %backend.backend_id, "dispatch of {subtask_id} failed: {e}");
            self.fail(&subtask_id, format!("dispatch to {} failed: {e}", backend.backend_id));
        }
    }

    /// Hands the slot its next sub-task, or retires it with `done`.
    fn give_work(&mut self, slot_id: &str) {
        let backend = self.slots[slot_id].backend.clone();
        match self.ledger.pop_queued() {
            Some(task) => self.send_subtask(task, &backend, Some(slot_id)),
            None => {
                let slot = self.slots.get_mut(slot_id).expect("slot exists");
                slot.retired = true;
                slot.current = None;
                let msg = SlotMsg { request_id: self.request_id.clone(), worker_slot_id: slot_id.to_string() };
                let _ = self.dispatcher.dispatch(&backend, Envelope::new(MessageType::Done, slot_id, &msg));
                *self.report.done_sent.entry(backend.backend_id).or_insert(0) += 1;
            }
        }
    }

    /// Sends `done` to slots still waiting on a `next` reply once all work is
    /// terminal, so every slot is retired exactly once.
    fn retire_idle_slots(&mut self) {
        if !self.ledger.is_finished() {
            return;
        }
        for slot_id in self.slot_order.clone() {
            if !self.slots[&slot_id].retired {
                self.give_work(&slot_id);
            }
        }
    }

    fn on_event(&mut self, event: BackendEvent) {
        match event {
            BackendEvent::Chunk(c) => {
                if self.ledger.is_assigned(&c.subtask_id) {
                    let _ =
                        self.out.send(MergeEvent::Chunk { subtask_id: c.subtask_id, seq: c.seq, records: c.records });
                }
            }
            BackendEvent::End(e) => {
                if self.ledger.is_assigned(&e.subtask_id) {
                    self.ledger
                        .complete(&e.subtask_id, Terminal::End { record_count: e.record_count })
                        .expect("assigned sub-task completes");
                    self.release_slot(&e.subtask_id);
                    let _ = self.out.send(MergeEvent::End { subtask_id: e.subtask_id, record_count: e.record_count });
                }
            }
            BackendEvent::Error(e) => match e.subtask_id {
                Some(id) if self.ledger.is_assigned(&id) => self.fail(&id, e.message),
                _ => warn!(request = %self.request_id, "back-end error without a live sub-task: {}", e.message),
            },
            BackendEvent::Next(n) => self.on_next(&n.worker_slot_id),
            BackendEvent::Lost { backend_id } => self.on_lost(&backend_id),
        }
    }

    fn on_next(&mut self, slot_id: &str) {
        match self.slots.get(slot_id) {
            Some(slot) if !slot.retired && slot.current.is_none() => self.give_work(slot_id),
            _ => {
                warn!(request = %self.request_id, slot = slot_id, "unexpected next ignored");
                self.report.protocol_violations += 1;
            }
        }
    }

    fn on_lost(&mut self, backend_id: &str) {
        for id in self.ledger.assigned_to(backend_id) {
            self.fail(&id, format!("connection to back-end {backend_id} lost"));
        }
        for slot in self.slots.values_mut().filter(|s| s.backend.backend_id == backend_id) {
            slot.retired = true;
            slot.current = None;
        }
        let live = self.slots.values().any(|s| !s.retired);
        if self.options.mode == ExecutionMode::Iterative && !live {
            self.abandon("no live worker slots remain");
        }
    }

    fn release_slot(&mut self, subtask_id: &str) {
        if let Some(slot_id) = self.slot_of.remove(subtask_id) {
            if let Some(slot) = self.slots.get_mut(&slot_id) {
                if slot.current.as_deref() == Some(subtask_id) {
                    slot.current = None;
                }
            }
        }
    }

    fn fail(&mut self, subtask_id: &str, message: String) {
        if self.ledger.complete(subtask_id, Terminal::Error { message: message.clone() }).is_ok() {
            self.release_slot(subtask_id);
            let _ = self.out.send(MergeEvent::Failed { subtask_id: subtask_id.to_string(), message });
        }
    }

    /// Fails whatever is still queued or assigned.
    fn abandon(&mut self, reason: &str) {
        let assigned: Vec<String> = self
            .slots
            .values()
            .filter_map(|s| s.current.clone())
            .chain(self.ledger.report().dispatches.keys().flat_map(|b| self.ledger.assigned_to(b)))
            .collect();
        for id in assigned {
            self.fail(&id, reason.to_string());
        }
        for id in self.ledger.fail_queued(reason) {
            let _ = self.out.send(MergeEvent::Failed { subtask_id: id, message: reason.to_string() });
        }
    }

    fn audit(&mut self) {
        if !self.options.audit {
            return;
        }
        let mut ok = self.ledger.is_partition(0);
        if self.options.mode == ExecutionMode::Iterative {
            let mut per_backend: HashMap<&str, usize> = HashMap::new();
            for slot in self.slots.values() {
                per_backend.entry(&slot.backend.backend_id).or_insert(0);
            }
            for backend in per_backend.keys() {
                ok &= self.ledger.in_flight(backend) <= self.options.per_server_inflight;
            }
        }
        if !ok {
            self.report.invariant_violations += 1;
        }
    }
}
