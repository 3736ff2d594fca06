//! In-process stand-in for a set of back-ends, for exercising the commander
//! without sockets. Each sub-task's `params` must carry `{"records": n}`;
//! the simulated handler emits `n` records after a random delay.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::json;
use tokio::sync::mpsc;

use super::{BackendEvent, SubtaskDispatcher};
use crate::wire::messages::{BackendAddr, ChunkMsg, EndMsg, SlotMsg, SubtaskMsg};
use crate::wire::{Envelope, MessageType, WireError};

const CHUNK: usize = 500;

#[derive(Default)]
struct State {
    routes: HashMap<String, mpsc::UnboundedSender<BackendEvent>>,
    killed: HashSet<String>,
    received: Vec<(String, String)>,
    done: HashMap<String, usize>,
    running: HashMap<String, usize>,
    peak_running: HashMap<String, usize>,
}

/// Simulated back-ends sharing one random latency source.
#[derive(Clone)]
pub struct SimulatedBackends {
    state: Arc<Mutex<State>>,
    rng: Arc<Mutex<StdRng>>,
    latency_ms: (u64, u64),
}

impl SimulatedBackends {
    pub fn new(seed: u64, latency_ms: (u64, u64)) -> Self {
        Self { state: Arc::default(), rng: Arc::new(Mutex::new(StdRng::seed_from_u64(seed))), latency_ms }
    }

    pub fn addrs(n: usize) -> Vec<BackendAddr> {
        (0..n).map(|i| BackendAddr { backend_id: format!("sim-{i}"), host: "sim".into(), port: i as u16 }).collect()
    }

    /// Opens the event channel the commander reads for `request_id`.
    pub fn open_request(&self, request_id: &str) -> mpsc::UnboundedReceiver<BackendEvent> {
        let (tx, rx) = mpsc::unbounded_channel();
        self.state.lock().unwrap().routes.insert(request_id.to_string(), tx);
        rx
    }

    /// Drops the back-end: in-flight work vanishes and every open request
    /// observes `Lost`.
    pub fn kill(&self, backend_id: &str) {
        let mut s = self.state.lock().unwrap();
        s.killed.insert(backend_id.to_string());
        for tx in s.routes.values() {
            let _ = tx.send(BackendEvent::Lost { backend_id: backend_id.to_string() });
        }
    }

    /// `(backend_id, subtask_id)` pairs in receipt order.
    pub fn received(&self) -> Vec<(String, String)> {
        self.state.lock().unwrap().received.clone()
    }

    pub fn received_per_backend(&self) -> HashMap<String, usize> {
        let mut m = HashMap::new();
        for (b, _) in self.received() {
            *m.entry(b).or_insert(0) += 1;
        }
        m
    }

    pub fn done_per_backend(&self) -> HashMap<String, usize> {
        self.state.lock().unwrap().done.clone()
    }

    /// Highest number of sub-tasks each back-end ran at once.
    pub fn peak_running(&self) -> HashMap<String, usize> {
        self.state.lock().unwrap().peak_running.clone()
    }

    fn delay(&self) -> Duration {
        let (lo, hi) = self.latency_ms;
        let ms = if hi > lo { self.rng.lock().unwrap().gen_range(lo..=hi) } else { lo };
        Duration::from_millis(ms)
    }

    fn run(&self, backend_id: String, msg: SubtaskMsg) {
        let this = self.clone();
        let delay = self.delay();
        tokio::spawn(async move {
            {
                let mut s = this.state.lock().unwrap();
                let now = {
                    let r = s.running.entry(backend_id.clone()).or_insert(0);
                    *r += 1;
                    *r
                };
                let peak = s.peak_running.entry(backend_id.clone()).or_insert(0);
                *peak = (*peak).max(now);
            }
            tokio::time::sleep(delay).await;
            let n = msg.subtask.params.get("records").and_then(|v| v.as_u64()).unwrap_or(0);
            let sid = msg.subtask.subtask_id.clone();
            let records: Vec<_> = (0..n).map(|i| json!({ "subtask": sid, "i": i })).collect();
            let mut s = this.state.lock().unwrap();
            *s.running.get_mut(&backend_id).unwrap() -= 1;
            if s.killed.contains(&backend_id) {
                return;
            }
            let Some(tx) = s.routes.get(&msg.request_id).cloned() else { return };
            drop(s);
            for (seq, chunk) in records.chunks(CHUNK).enumerate() {
                let _ = tx.send(BackendEvent::Chunk(ChunkMsg {
                    request_id: msg.request_id.clone(),
                    subtask_id: sid.clone(),
                    seq: seq as u64,
                    records: chunk.to_vec(),
                }));
            }
            let _ = tx.send(BackendEvent::End(EndMsg {
                request_id: msg.request_id.clone(),
                subtask_id: sid.clone(),
                record_count: n,
            }));
            if let Some(slot) = msg.worker_slot_id {
                let _ = tx.send(BackendEvent::Next(SlotMsg { request_id: msg.request_id, worker_slot_id: slot }));
            }
        });
    }
}

impl SubtaskDispatcher for SimulatedBackends {
    fn dispatch(&self, backend: &BackendAddr, env: Envelope) -> Result<(), WireError> {
        {
            let mut s = self.state.lock().unwrap();
            if s.killed.contains(&backend.backend_id) {
                return Err(WireError::ConnectionLost);
            }
            match env.kind {
                MessageType::Subtask => s.received.push((backend.backend_id.clone(), env.id.clone())),
                MessageType::Done => *s.done.entry(backend.backend_id.clone()).or_insert(0) += 1,
                _ => {}
            }
        }
        if env.kind == MessageType::Subtask {
            let msg: SubtaskMsg = env.payload_as()?;
            self.run(backend.backend_id.clone(), msg);
        }
        Ok(())
    }
}
