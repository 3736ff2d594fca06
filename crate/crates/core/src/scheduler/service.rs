use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use serde_json::json;
use tokio::net::TcpListener;
use tokio_util::sync::CancellationToken;
use tracing::{debug, info, warn};

use super::{RoundRobinScheduler, SchedulerError};
use crate::wire::messages::{AllocateMsg, AllocationMsg, ErrorMsg, PongMsg, RegisterAction, RegisterMsg};
use crate::wire::{Envelope, MessageType, ObjectConnection};

/// TCP front of a [`RoundRobinScheduler`]; every connection shares one cursor.
pub struct SchedulerServer {
    listener: TcpListener,
    state: Arc<Mutex<RoundRobinScheduler>>,
}

impl SchedulerServer {
    pub async fn bind(addr: impl tokio::net::ToSocketAddrs) -> std::io::Result<Self> {
        Ok(Self { listener: TcpListener::bind(addr).await?, state: Arc::default() })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn state(&self) -> Arc<Mutex<RoundRobinScheduler>> {
        self.state.clone()
    }

    pub async fn run(self, shutdown: CancellationToken) {
        info!(addr = %self.local_addr(), "scheduler listening");
        loop {
            tokio::select! {
                _ = shutdown.cancelled() => break,
                accepted = self.listener.accept() => match accepted {
                    Ok((stream, peer)) => {
                        debug!(%peer, "scheduler connection");
                        let state = self.state.clone();
                        let shutdown = shutdown.clone();
                        tokio::spawn(serve_connection(ObjectConnection::from_stream(stream), state, shutdown));
                    }
                    Err(e) => warn!("accept failed: {e}"),
                }
            }
        }
        info!("scheduler stopped");
    }
}

async fn serve_connection(
    mut conn: ObjectConnection,
    state: Arc<Mutex<RoundRobinScheduler>>,
    shutdown: CancellationToken,
) {
    loop {
        let env = tokio::select! {
            _ = shutdown.cancelled() => return,
            msg = conn.recv() => match msg {
                Some(Ok(env)) => env,
                Some(Err(e)) => {
                    debug!("scheduler connection dropped: {e}");
                    return;
                }
                None => return,
            },
        };
        let reply = handle(&env, &state, &shutdown);
        if conn.send(&reply).is_err() {
            return;
        }
    }
}

fn handle(env: &Envelope, state: &Mutex<RoundRobinScheduler>, shutdown: &CancellationToken) -> Envelope {
    let result = match env.kind {
        MessageType::Register => register(env, state),
        MessageType::Allocate => allocate(env, state),
        MessageType::Ping => {
            let s = state.lock().expect("scheduler lock poisoned");
            let stats = json!({ "registered": s.len(), "cursor": s.cursor() });
            return env.reply(MessageType::Pong, &PongMsg { role: "scheduler".into(), pid: std::process::id(), stats });
        }
        MessageType::Stop => {
            shutdown.cancel();
            return env.reply(MessageType::Done, &json!({}));
        }
        other => Err(SchedulerError::Remote(format!("scheduler does not handle {other}"))),
    };
    match result {
        Ok(alloc) => env.reply(MessageType::Allocation, &alloc),
        Err(e) => {
            env.reply(MessageType::Error, &ErrorMsg { request_id: None, subtask_id: None, message: e.to_string() })
        }
    }
}

fn register(env: &Envelope, state: &Mutex<RoundRobinScheduler>) -> Result<AllocationMsg, SchedulerError> {
    let msg: RegisterMsg = env.payload_as()?;
    let mut s = state.lock().expect("scheduler lock poisoned");
    let servers = match msg.action {
        RegisterAction::Add => {
            let id = s.register_backend(&msg.host, msg.port);
            debug!(backend = %id, "registered");
            s.backends().iter().filter(|b| b.backend_id == id).map(|b| b.addr()).collect()
        }
        RegisterAction::Remove => {
            let removed = s.deregister_endpoint(&msg.host, msg.port)?;
            info!(backend = %removed.backend_id, "deregistered");
            vec![removed.addr()]
        }
    };
    Ok(AllocationMsg { servers, registered: s.len() })
}

fn allocate(env: &Envelope, state: &Mutex<RoundRobinScheduler>) -> Result<AllocationMsg, SchedulerError> {
    let msg: AllocateMsg = env.payload_as()?;
    let mut s = state.lock().expect("scheduler lock poisoned");
    let records = match msg.count {
        Some(n) => s.allocate(n)?,
        None => s.allocate_all()?,
    };
    Ok(AllocationMsg { servers: records.iter().map(|r| r.addr()).collect(), registered: s.len() })
}
