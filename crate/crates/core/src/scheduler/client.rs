use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::Serialize;
use tokio::sync::Mutex;

use super::SchedulerError;
use crate::wire::messages::{AllocateMsg, AllocationMsg, ErrorMsg, PongMsg, RegisterAction, RegisterMsg};
use crate::wire::{Envelope, MessageType, ObjectConnection, WireError};

const REPLY_TIMEOUT: Duration = Duration::from_secs(5);

/// Request/reply client over one persistent scheduler connection,
/// reconnecting once if the link has dropped.
pub struct SchedulerClient {
    endpoint: String,
    conn: Mutex<Option<ObjectConnection>>,
    seq: AtomicU64,
    tag: String,
}

impl SchedulerClient {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            conn: Mutex::new(None),
            seq: AtomicU64::new(0),
            tag: format!("p{}", std::process::id()),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub async fn register(&self, host: &str, port: u16) -> Result<AllocationMsg, SchedulerError> {
        let msg = RegisterMsg { host: host.into(), port, action: RegisterAction::Add };
        self.call(MessageType::Register, &msg).await?.payload_as().map_err(Into::into)
    }

    pub async fn deregister(&self, host: &str, port: u16) -> Result<AllocationMsg, SchedulerError> {
        let msg = RegisterMsg { host: host.into(), port, action: RegisterAction::Remove };
        self.call(MessageType::Register, &msg).await?.payload_as().map_err(Into::into)
    }

    /// `None` asks for one entry per registered back-end.
    pub async fn allocate(&self, count: Option<usize>) -> Result<AllocationMsg, SchedulerError> {
        self.call(MessageType::Allocate, &AllocateMsg { count }).await?.payload_as().map_err(Into::into)
    }

    pub async fn ping(&self) -> Result<PongMsg, SchedulerError> {
        self.call(MessageType::Ping, &serde_json::json!({})).await?.payload_as().map_err(Into::into)
    }

    async fn call<P: Serialize>(&self, kind: MessageType, payload: &P) -> Result<Envelope, SchedulerError> {
        let id = format!("{}-{}", self.tag, self.seq.fetch_add(1, Ordering::Relaxed));
        let env = Envelope::new(kind, id, payload);
        let mut guard = self.conn.lock().await;
        let mut last_err = WireError::ConnectionLost;
        for _attempt in 0..2 {
            if guard.is_none() {
                *guard = Some(ObjectConnection::connect(&self.endpoint).await?);
            }
            let conn = guard.as_mut().expect("connection present");
            match exchange(conn, &env).await {
                Ok(reply) => {
                    if reply.kind == MessageType::Error {
                        let err: ErrorMsg = reply.payload_as()?;
                        return Err(SchedulerError::from_remote(err.message));
                    }
                    return Ok(reply);
                }
                Err(e) => {
                    *guard = None;
                    last_err = e;
                }
            }
        }
        Err(last_err.into())
    }
}

async fn exchange(conn: &mut ObjectConnection, env: &Envelope) -> Result<Envelope, WireError> {
    conn.send(env)?;
    loop {
        let reply = tokio::time::timeout(REPLY_TIMEOUT, conn.recv())
            .await
            .map_err(|_| WireError::ConnectionLost)?
            .ok_or(WireError::ConnectionLost)??;
        // stale replies from an abandoned exchange are skipped
        if reply.id == env.id {
            return Ok(reply);
        }
    }
}
