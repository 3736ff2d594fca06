use std::time::Instant;

use super::SchedulerError;
use crate::wire::messages::BackendAddr;

#[derive(Debug, Clone)]
pub struct BackendRecord {
    pub backend_id: String,
    pub host: String,
    pub port: u16,
    pub last_seen: Instant,
}

impl BackendRecord {
    pub fn addr(&self) -> BackendAddr {
        BackendAddr { backend_id: self.backend_id.clone(), host: self.host.clone(), port: self.port }
    }
}

/// Registration-ordered back-end list with one global round-robin cursor.
#[derive(Debug, Default)]
pub struct RoundRobinScheduler {
    backends: Vec<BackendRecord>,
    cursor: usize,
}

impl RoundRobinScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a back-end, or refreshes `last_seen` if `(host, port)` is known.
    pub fn register_backend(&mut self, host: &str, port: u16) -> String {
        let now = Instant::now();
        if let Some(existing) = self.backends.iter_mut().find(|b| b.host == host && b.port == port) {
            existing.last_seen = now;
            return existing.backend_id.clone();
        }
        let backend_id = format!("{host}:{port}");
        self.backends.push(BackendRecord {
            backend_id: backend_id.clone(),
            host: host.to_string(),
            port,
            last_seen: now,
        });
        backend_id
    }

    /// Hands out `count` entries by cycling from the cursor. Entries repeat
    /// when `count` exceeds the number of registered back-ends.
    pub fn allocate(&mut self, count: usize) -> Result<Vec<BackendRecord>, SchedulerError> {
        let n = self.backends.len();
        if n == 0 {
            return Err(SchedulerError::NoBackendsAvailable);
        }
        if count == 0 {
            return Err(SchedulerError::InvalidCount);
        }
        let out = (0..count).map(|i| self.backends[(self.cursor + i) % n].clone()).collect();
        self.cursor = (self.cursor + count) % n;
        Ok(out)
    }

    /// One entry per registered back-end, starting at the cursor.
    pub fn allocate_all(&mut self) -> Result<Vec<BackendRecord>, SchedulerError> {
        self.allocate(self.backends.len().max(1))
    }

    pub fn deregister_backend(&mut self, backend_id: &str) -> Result<BackendRecord, SchedulerError> {
        let idx = self
            .backends
            .iter()
            .position(|b| b.backend_id == backend_id)
            .ok_or_else(|| SchedulerError::UnknownBackend(backend_id.to_string()))?;
        let removed = self.backends.remove(idx);
        if idx < self.cursor {
            self.cursor -= 1;
        }
        if self.cursor >= self.backends.len() {
            self.cursor = 0;
        }
        Ok(removed)
    }

    pub fn deregister_endpoint(&mut self, host: &str, port: u16) -> Result<BackendRecord, SchedulerError> {
        let id = self
            .backends
            .iter()
            .find(|b| b.host == host && b.port == port)
            .map(|b| b.backend_id.clone())
            .ok_or_else(|| SchedulerError::UnknownBackend(format!("{host}:{port}")))?;
        self.deregister_backend(&id)
    }

    pub fn backends(&self) -> &[BackendRecord] {
        &self.backends
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.backends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backends.is_empty()
    }
}
