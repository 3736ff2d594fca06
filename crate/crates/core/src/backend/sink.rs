use serde_json::Value;
use tokio_util::sync::CancellationToken;

use crate::registry::{RecordSink, UseCaseError};
use crate::wire::messages::{ChunkMsg, EndMsg};
use crate::wire::{Envelope, MessageType, ObjectSender};

/// Maximum records per `chunk` envelope.
pub const CHUNK_RECORDS: usize = 500;

/// Batches handler output into sequenced chunks on the connection.
pub struct ChunkSink {
    sender: ObjectSender,
    request_id: String,
    subtask_id: String,
    conn_gone: CancellationToken,
    buf: Vec<Value>,
    seq: u64,
    emitted: u64,
    lost: bool,
}

impl ChunkSink {
    pub fn new(sender: ObjectSender, request_id: String, subtask_id: String, conn_gone: CancellationToken) -> Self {
        Self {
            sender,
            request_id,
            subtask_id,
            conn_gone,
            buf: Vec::with_capacity(CHUNK_RECORDS),
            seq: 0,
            emitted: 0,
            lost: false,
        }
    }

    fn flush(&mut self) -> Result<(), UseCaseError> {
        if self.buf.is_empty() {
            return Ok(());
        }
        if self.conn_gone.is_cancelled() {
            self.lost = true;
            return Err(UseCaseError::SinkClosed);
        }
        let msg = ChunkMsg {
            request_id: self.request_id.clone(),
            subtask_id: self.subtask_id.clone(),
            seq: self.seq,
            records: std::mem::take(&mut self.buf),
        };
        let n = msg.records.len() as u64;
        self.sender.send(&Envelope::new(MessageType::Chunk, self.subtask_id.clone(), &msg)).map_err(|_| {
            self.lost = true;
            UseCaseError::SinkClosed
        })?;
        self.seq += 1;
        self.emitted += n;
        Ok(())
    }

    /// Sends the tail chunk and the `end` envelope; returns the record count.
    pub fn finish(&mut self) -> Result<u64, UseCaseError> {
        self.flush()?;
        let end = EndMsg {
            request_id: self.request_id.clone(),
            subtask_id: self.subtask_id.clone(),
            record_count: self.emitted,
        };
        self.sender.send(&Envelope::new(MessageType::End, self.subtask_id.clone(), &end)).map_err(|_| {
            self.lost = true;
            UseCaseError::SinkClosed
        })?;
        Ok(self.emitted)
    }

    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    pub fn is_lost(&self) -> bool {
        self.lost
    }
}

impl RecordSink for ChunkSink {
    fn emit(&mut self, record: Value) -> Result<(), UseCaseError> {
        if !record.is_object() {
            return Err(UseCaseError::Failed("records must be JSON objects".into()));
        }
        self.buf.push(record);
        if self.buf.len() >= CHUNK_RECORDS {
            self.flush()?;
        }
        Ok(())
    }
}
