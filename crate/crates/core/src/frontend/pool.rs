use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use tokio::sync::mpsc;
use tracing::{debug, warn};

use crate::commander::{BackendEvent, SubtaskDispatcher};
use crate::wire::messages::BackendAddr;
use crate::wire::{Envelope, ObjectConnection, ObjectReceiver, ObjectSender, WireError};

type Routes = Arc<Mutex<HashMap<String, mpsc::UnboundedSender<BackendEvent>>>>;

/// Persistent connections from one front-end to the back-ends, with inbound
/// traffic routed to the owning request by request id.
#[derive(Clone, Default)]
pub struct BackendPool {
    conns: Arc<Mutex<HashMap<String, ObjectSender>>>,
    routes: Routes,
}

/// Removes a request's route when dropped.
pub struct RouteGuard {
    routes: Routes,
    request_id: String,
}

impl Drop for RouteGuard {
    fn drop(&mut self) {
        self.routes.lock().expect("routes lock").remove(&self.request_id);
    }
}

impl BackendPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open_route(&self, request_id: &str) -> (mpsc::UnboundedReceiver<BackendEvent>, RouteGuard) {
        let (tx, rx) = mpsc::unbounded_channel();
        self.routes.lock().expect("routes lock").insert(request_id.to_string(), tx);
        (rx, RouteGuard { routes: self.routes.clone(), request_id: request_id.to_string() })
    }

    pub fn active_routes(&self) -> usize {
        self.routes.lock().expect("routes lock").len()
    }

    pub fn connected(&self) -> usize {
        self.conns.lock().expect("pool lock").values().filter(|s| !s.is_closed()).count()
    }

    /// Opens connections to any allocated back-end not yet connected.
    pub async fn ensure(&self, allocation: &[BackendAddr]) -> Result<(), (BackendAddr, WireError)> {
        for backend in allocation {
            let live = self.conns.lock().expect("pool lock").get(&backend.backend_id).is_some_and(|s| !s.is_closed());
            if live {
                continue;
            }
            let conn = ObjectConnection::connect(backend.endpoint()).await.map_err(|e| (backend.clone(), e))?;
            let (sender, receiver) = conn.split();
            let mut conns = self.conns.lock().expect("pool lock");
            if conns.get(&backend.backend_id).is_some_and(|s| !s.is_closed()) {
                // another request connected first; ours is dropped
                continue;
            }
            debug!(backend = %backend.backend_id, "connected");
            conns.insert(backend.backend_id.clone(), sender.clone());
            tokio::spawn(read_loop(backend.backend_id.clone(), receiver, sender, self.clone()));
        }
        Ok(())
    }

    fn lost(&self, backend_id: &str, sender: &ObjectSender) {
        {
            let mut conns = self.conns.lock().expect("pool lock");
            // only forget the connection this reader belonged to
            if conns.get(backend_id).is_some_and(|s| s.same_channel(sender)) {
                conns.remove(backend_id);
            }
        }
        let routes = self.routes.lock().expect("routes lock");
        for tx in routes.values() {
            let _ = tx.send(BackendEvent::Lost { backend_id: backend_id.to_string() });
        }
    }
}

impl SubtaskDispatcher for BackendPool {
    fn dispatch(&self, backend: &BackendAddr, env: Envelope) -> Result<(), WireError> {
        let sender = self.conns.lock().expect("pool lock").get(&backend.backend_id).cloned();
        match sender {
            Some(s) => s.send(&env),
            None => Err(WireError::ConnectionLost),
        }
    }
}

async fn read_loop(backend_id: String, mut receiver: ObjectReceiver, sender: ObjectSender, pool: BackendPool) {
    loop {
        let env = match receiver.recv().await {
            Some(Ok(env)) => env,
            Some(Err(e)) => {
                warn!(backend = %backend_id, "connection failed: {e}");
                break;
            }
            None => {
                debug!(backend = %backend_id, "connection closed");
                break;
            }
        };
        match BackendEvent::from_envelope(&env) {
            Ok(Some((request_id, event))) => {
                let route = pool.routes.lock().expect("routes lock").get(&request_id).cloned();
                // late traffic for finished requests is dropped
                if let Some(tx) = route {
                    let _ = tx.send(event);
                }
            }
            Ok(None) => debug!(backend = %backend_id, kind = %env.kind, "ignored envelope"),
            Err(e) => warn!(backend = %backend_id, "bad envelope: {e}"),
        }
    }
    pool.lost(&backend_id, &sender);
}
