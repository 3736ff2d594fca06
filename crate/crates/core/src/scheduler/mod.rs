//! Round-robin mapping of sub-tasks onto registered back-ends.
//!
//! The scheduler only hands out server lists; front-ends contact the
//! back-ends themselves. Stale entries are removed by the controller.

mod client;
mod round_robin;
mod service;

pub use client::SchedulerClient;
pub use round_robin::{BackendRecord, RoundRobinScheduler};
pub use service::SchedulerServer;

use thiserror::Error;

use crate::wire::WireError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedulerError {
    #[error("no back-ends available")]
    NoBackendsAvailable,
    #[error("unknown back-end {0:?}")]
    UnknownBackend(String),
    #[error("allocation count must be positive")]
    InvalidCount,
    #[error("scheduler error: {0}")]
    Remote(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

impl SchedulerError {
    fn from_remote(message: String) -> Self {
        if message == SchedulerError::NoBackendsAvailable.to_string() {
            SchedulerError::NoBackendsAvailable
        } else if let Some(id) = message.strip_prefix("unknown back-end ") {
            SchedulerError::UnknownBackend(id.trim_matches('"').to_string())
        } else {
            SchedulerError::Remote(message)
        }
    }
}
