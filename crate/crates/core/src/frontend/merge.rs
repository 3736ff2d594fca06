use std::collections::{HashMap, HashSet, VecDeque};

use futures::Stream;
use serde_json::Value;
use thiserror::Error;
use tokio::sync::mpsc;

use crate::commander::MergeEvent;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("sub-task {subtask_id} failed: {message}")]
    SubtaskFailed { subtask_id: String, message: String },
    #[error("sub-task {subtask_id}: expected chunk {expected}, got {got}")]
    OutOfOrder { subtask_id: String, expected: u64, got: u64 },
    #[error("sub-task {subtask_id}: end reports {reported} records, received {received}")]
    CountMismatch { subtask_id: String, reported: u64, received: u64 },
    #[error("result stream closed with {0} sub-tasks outstanding")]
    Incomplete(usize),
    #[error("unexpected event for sub-task {0}")]
    Unexpected(String),
}

/// Per-request merge bookkeeping.
#[derive(Debug, Default)]
pub struct MergeState {
    pending: HashSet<String>,
    next_seq: HashMap<String, u64>,
    received: HashMap<String, u64>,
    pub records_forwarded: u64,
    pub failed: bool,
}

impl MergeState {
    pub fn new(subtask_ids: impl IntoIterator<Item = String>) -> Self {
        Self { pending: subtask_ids.into_iter().collect(), ..Default::default() }
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn is_done(&self) -> bool {
        self.pending.is_empty() || self.failed
    }

    /// Applies one event, appending accepted records to `out`.
    pub fn apply(&mut self, event: MergeEvent, out: &mut VecDeque<Value>) -> Result<(), MergeError> {
        let result = self.apply_inner(event, out);
        if result.is_err() {
            self.failed = true;
        }
        result
    }

    fn apply_inner(&mut self, event: MergeEvent, out: &mut VecDeque<Value>) -> Result<(), MergeError> {
        match event {
            MergeEvent::Chunk { subtask_id, seq, records } => {
                if !self.pending.contains(&subtask_id) {
                    return Err(MergeError::Unexpected(subtask_id));
                }
                let expected = self.next_seq.entry(subtask_id.clone()).or_insert(0);
                if seq != *expected {
                    return Err(MergeError::OutOfOrder { subtask_id, expected: *expected, got: seq });
                }
                *expected += 1;
                *self.received.entry(subtask_id).or_insert(0) += records.len() as u64;
                self.records_forwarded += records.len() as u64;
                out.extend(records);
            }
            MergeEvent::End { subtask_id, record_count } => {
                if !self.pending.remove(&subtask_id) {
                    return Err(MergeError::Unexpected(subtask_id));
                }
                let received = self.received.get(&subtask_id).copied().unwrap_or(0);
                if received != record_count {
                    return Err(MergeError::CountMismatch { subtask_id, reported: record_count, received });
                }
            }
            MergeEvent::Failed { subtask_id, message } => {
                return Err(MergeError::SubtaskFailed { subtask_id, message });
            }
        }
        Ok(())
    }
}

/// Combines per-sub-task chunk streams into one record stream.
///
/// Records of one sub-task keep their order; sub-tasks interleave in arrival
/// order. The stream ends once every sub-task has ended, or after yielding
/// the first error.
pub fn merge_streams(
    subtask_ids: impl IntoIterator<Item = String>,
    events: mpsc::UnboundedReceiver<MergeEvent>,
) -> impl Stream<Item = Result<Value, MergeError>> + Send + 'static {
    let state = MergeState::new(subtask_ids);
    futures::stream::unfold(
        (state, events, VecDeque::new(), false),
        |(mut state, mut events, mut buf, stop)| async move {
            loop {
                if let Some(record) = buf.pop_front() {
                    return Some((Ok(record), (state, events, buf, stop)));
                }
                if stop || state.is_done() {
                    return None;
                }
                match events.recv().await {
                    Some(ev) => {
                        if let Err(e) = state.apply(ev, &mut buf) {
                            buf.clear();
                            return Some((Err(e), (state, events, buf, true)));
                        }
                    }
                    None => {
                        let pending = state.pending();
                        return Some((Err(MergeError::Incomplete(pending)), (state, events, buf, true)));
                    }
                }
            }
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use futures::StreamExt;
    use serde_json::json;

    fn chunk(id: &str, seq: u64, vals: &[i64]) -> MergeEvent {
        MergeEvent::Chunk { subtask_id: id.into(), seq, records: vals.iter().map(|v| json!({"v": v})).collect() }
    }

    fn end(id: &str, n: u64) -> MergeEvent {
        MergeEvent::End { subtask_id: id.into(), record_count: n }
    }

    async fn collect(ids: &[&str], events: Vec<MergeEvent>) -> Vec<Result<Value, MergeError>> {
        let (tx, rx) = mpsc::unbounded_channel();
        for e in events {
            tx.send(e).unwrap();
        }
        drop(tx);
        merge_streams(ids.iter().map(|s| s.to_string()), rx).collect().await
    }

    #[tokio::test]
    async fn conservation_over_four() {
        let out = collect(
            &["a", "b", "c", "d"],
            vec![
                chunk("b", 0, &[1, 2]),
                chunk("a", 0, &[3]),
                end("a", 1),
                chunk("d", 0, &[4, 5, 6]),
                end("b", 2),
                end("c", 0),
                chunk("d", 1, &[7]),
                end("d", 4),
            ],
        )
        .await;
        assert_eq!(out.len(), 7);
        assert!(out.iter().all(Result::is_ok));
    }

    #[tokio::test]
    async fn single_subtask_is_identity() {
        let out = collect(&["x"], vec![chunk("x", 0, &[1, 2]), chunk("x", 1, &[3]), end("x", 3)]).await;
        let vals: Vec<_> = out.into_iter().map(|r| r.unwrap()["v"].as_i64().unwrap()).collect();
        assert_eq!(vals, vec![1, 2, 3]);
    }

    #[tokio::test]
    async fn failure_aborts() {
        let out = collect(
            &["a", "b"],
            vec![chunk("a", 0, &[1]), MergeEvent::Failed { subtask_id: "b".into(), message: "boom".into() }],
        )
        .await;
        assert_eq!(out.len(), 2);
        assert_eq!(out[0], Ok(json!({"v": 1})));
        assert!(matches!(&out[1], Err(MergeError::SubtaskFailed { subtask_id, .. }) if subtask_id == "b"));
    }

    #[tokio::test]
    async fn gaps_and_miscounts_are_corruption() {
        let out = collect(&["a"], vec![chunk("a", 1, &[1])]).await;
        assert!(matches!(out[0], Err(MergeError::OutOfOrder { expected: 0, got: 1, .. })));
        let out = collect(&["a"], vec![chunk("a", 0, &[1]), end("a", 2)]).await;
        assert_eq!(out.len(), 2);
        assert!(matches!(out[1], Err(MergeError::CountMismatch { reported: 2, received: 1, .. })));
    }

    #[tokio::test]
    async fn early_close_is_incomplete() {
        let out = collect(&["a", "b"], vec![end("a", 0)]).await;
        assert_eq!(out, vec![Err(MergeError::Incomplete(1))]);
    }
}
