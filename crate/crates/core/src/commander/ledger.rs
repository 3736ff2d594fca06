use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::registry::SubTask;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Terminal {
    End { record_count: u64 },
    Error { message: String },
}

impl Terminal {
    pub fn is_error(&self) -> bool {
        matches!(self, Terminal::Error { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("sub-task {0} is not queued")]
    NotQueued(String),
    #[error("sub-task {0} assigned twice")]
    DuplicateAssignment(String),
    #[error("sub-task {0} already terminal")]
    AlreadyTerminal(String),
    #[error("unknown sub-task {0}")]
    Unknown(String),
}

/// Tracks where each sub-task of one request is: queued, assigned to a
/// back-end, or terminal. Every sub-task is in exactly one of the three.
#[derive(Debug, Default)]
pub struct DispatchLedger {
    queued: VecDeque<SubTask>,
    assigned: HashMap<String, String>,
    terminal: HashMap<String, Terminal>,
    known: HashMap<String, ()>,
    in_flight: HashMap<String, usize>,
    peak_in_flight: HashMap<String, usize>,
    dispatches: HashMap<String, usize>,
    dispatch_total: usize,
}

impl DispatchLedger {
    pub fn new(subtasks: Vec<SubTask>) -> Self {
        let known = subtasks.iter().map(|s| (s.subtask_id.clone(), ())).collect();
        Self { queued: subtasks.into(), known, ..Default::default() }
    }

    /// Removes the head of the queue; the caller must assign or fail it.
    pub fn pop_queued(&mut self) -> Option<SubTask> {
        self.queued.pop_front()
    }

    pub fn assign(&mut self, subtask_id: &str, backend_id: &str) -> Result<(), LedgerError> {
        if !self.known.contains_key(subtask_id) {
            return Err(LedgerError::Unknown(subtask_id.into()));
        }
        if self.assigned.contains_key(subtask_id) {
            return Err(LedgerError::DuplicateAssignment(subtask_id.into()));
        }
        if self.terminal.contains_key(subtask_id) {
            return Err(LedgerError::AlreadyTerminal(subtask_id.into()));
        }
        if self.queued.iter().any(|s| s.subtask_id == subtask_id) {
            return Err(LedgerError::NotQueued(subtask_id.into()));
        }
        self.assigned.insert(subtask_id.into(), backend_id.into());
        let now = self.in_flight.entry(backend_id.into()).or_insert(0);
        *now += 1;
        let peak = self.peak_in_flight.entry(backend_id.into()).or_insert(0);
        *peak = (*peak).max(*now);
        *self.dispatches.entry(backend_id.into()).or_insert(0) += 1;
        self.dispatch_total += 1;
        Ok(())
    }

    /// Moves a popped or assigned sub-task to terminal.
    pub fn complete(&mut self, subtask_id: &str, outcome: Terminal) -> Result<Option<String>, LedgerError> {
        if !self.known.contains_key(subtask_id) {
            return Err(LedgerError::Unknown(subtask_id.into()));
        }
        if self.terminal.contains_key(subtask_id) {
            return Err(LedgerError::AlreadyTerminal(subtask_id.into()));
        }
        let backend = self.assigned.remove(subtask_id);
        if let Some(b) = &backend {
            if let Some(n) = self.in_flight.get_mut(b) {
                *n -= 1;
            }
        }
        self.terminal.insert(subtask_id.into(), outcome);
        Ok(backend)
    }

    /// Fails everything still queued.
    pub fn fail_queued(&mut self, message: &str) -> Vec<String> {
        let ids: Vec<String> = self.queued.drain(..).map(|s| s.subtask_id).collect();
        for id in &ids {
            self.terminal.insert(id.clone(), Terminal::Error { message: message.into() });
        }
        ids
    }

    pub fn assigned_to(&self, backend_id: &str) -> Vec<String> {
        let mut ids: Vec<String> =
            self.assigned.iter().filter(|(_, b)| b.as_str() == backend_id).map(|(s, _)| s.clone()).collect();
        ids.sort();
        ids
    }

    pub fn backend_of(&self, subtask_id: &str) -> Option<&str> {
        self.assigned.get(subtask_id).map(String::as_str)
    }

    pub fn is_assigned(&self, subtask_id: &str) -> bool {
        self.assigned.contains_key(subtask_id)
    }

    pub fn is_finished(&self) -> bool {
        self.queued.is_empty() && self.assigned.is_empty()
    }

    pub fn queued_len(&self) -> usize {
        self.queued.len()
    }

    pub fn assigned_len(&self) -> usize {
        self.assigned.len()
    }

    pub fn in_flight(&self, backend_id: &str) -> usize {
        self.in_flight.get(backend_id).copied().unwrap_or(0)
    }

    /// Checks that queued/assigned/terminal partition the sub-task set.
    /// `popped` counts sub-tasks taken off the queue and not yet recorded.
    pub fn is_partition(&self, popped: usize) -> bool {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for id in self
            .queued
            .iter()
            .map(|s| s.subtask_id.as_str())
            .chain(self.assigned.keys().map(String::as_str))
            .chain(self.terminal.keys().map(String::as_str))
        {
            *seen.entry(id).or_insert(0) += 1;
        }
        seen.values().all(|&c| c == 1) && seen.len() + popped == self.known.len()
    }

    pub fn report(&self) -> LedgerReport {
        let mut failed: Vec<String> =
            self.terminal.iter().filter(|(_, t)| t.is_error()).map(|(id, _)| id.clone()).collect();
        failed.sort();
        LedgerReport {
            total: self.known.len(),
            terminal: self.terminal.len(),
            completed: self.terminal.len() - failed.len(),
            failed,
            still_queued: self.queued.len(),
            still_assigned: self.assigned.len(),
            dispatches: self.dispatches.clone(),
            dispatch_total: self.dispatch_total,
            peak_in_flight: self.peak_in_flight.clone(),
        }
    }
}

/// Snapshot of a ledger after execution.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LedgerReport {
    pub total: usize,
    pub terminal: usize,
    pub completed: usize,
    pub failed: Vec<String>,
    pub still_queued: usize,
    pub still_assigned: usize,
    /// Sub-tasks sent to each back-end.
    pub dispatches: HashMap<String, usize>,
    pub dispatch_total: usize,
    /// Highest number of simultaneously assigned sub-tasks per back-end.
    pub peak_in_flight: HashMap<String, usize>,
}
