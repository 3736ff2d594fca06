use std::sync::Arc;

use bytes::Bytes;
use futures::StreamExt;
use tokio::io::{AsyncWriteExt, BufWriter};
use tokio::net::tcp::{OwnedReadHalf, OwnedWriteHalf};
use tokio::net::{TcpStream, ToSocketAddrs};
use tokio::sync::{mpsc, Mutex};
use tokio::task::JoinHandle;
use tokio_util::codec::FramedRead;

use super::codec::{encode_frame, JsonObject, ObjectCodec};
use super::{Envelope, WireError};

/// Full-duplex object channel over one TCP stream.
pub struct ObjectConnection {
    sender: ObjectSender,
    receiver: ObjectReceiver,
}

impl ObjectConnection {
    pub async fn connect(addr: impl ToSocketAddrs) -> Result<Self, WireError> {
        let stream = TcpStream::connect(addr).await.map_err(|e| WireError::ConnectionRefused(e.to_string()))?;
        Ok(Self::from_stream(stream))
    }

    pub fn from_stream(stream: TcpStream) -> Self {
        let _ = stream.set_nodelay(true);
        let (read, write) = stream.into_split();
        let (tx, rx) = mpsc::unbounded_channel();
        let writer = tokio::spawn(write_loop(write, rx));
        Self {
            sender: ObjectSender { tx, writer: Arc::new(Mutex::new(Some(writer))) },
            receiver: ObjectReceiver { frames: FramedRead::new(read, ObjectCodec::default()) },
        }
    }

    pub fn sender(&self) -> ObjectSender {
        self.sender.clone()
    }

    pub fn send(&self, env: &Envelope) -> Result<(), WireError> {
        self.sender.send(env)
    }

    pub fn send_object(&self, obj: &JsonObject) -> Result<(), WireError> {
        self.sender.send_object(obj)
    }

    pub async fn recv(&mut self) -> Option<Result<Envelope, WireError>> {
        self.receiver.recv().await
    }

    pub async fn recv_object(&mut self) -> Option<Result<JsonObject, WireError>> {
        self.receiver.recv_object().await
    }

    pub fn split(self) -> (ObjectSender, ObjectReceiver) {
        (self.sender, self.receiver)
    }

    /// Flushes queued frames and closes the write side.
    pub async fn close(self) {
        self.sender.close().await;
    }
}

/// Cloneable sending half. Frames are queued whole, so concurrent senders
/// never interleave bytes of different frames.
#[derive(Clone)]
pub struct ObjectSender {
    tx: mpsc::UnboundedSender<Bytes>,
    writer: Arc<Mutex<Option<JoinHandle<()>>>>,
}

impl ObjectSender {
    pub fn send(&self, env: &Envelope) -> Result<(), WireError> {
        self.send_object(&env.to_object())
    }

    pub fn send_object(&self, obj: &JsonObject) -> Result<(), WireError> {
        let frame = encode_frame(obj)?;
        self.tx.send(frame).map_err(|_| WireError::ConnectionLost)
    }

    /// True when both senders feed the same connection.
    pub fn same_channel(&self, other: &ObjectSender) -> bool {
        self.tx.same_channel(&other.tx)
    }

    pub fn is_closed(&self) -> bool {
        self.tx.is_closed()
    }

    /// Resolves once the peer side of the writer has gone away.
    pub async fn closed(&self) {
        self.tx.closed().await
    }

    pub async fn close(self) {
        let Self { tx, writer } = self;
        drop(tx);
        // only the last clone to close waits; earlier ones just drop
        if Arc::strong_count(&writer) == 1 {
            if let Some(handle) = writer.lock().await.take() {
                let _ = handle.await;
            }
        }
    }
}

async fn write_loop(write: OwnedWriteHalf, mut rx: mpsc::UnboundedReceiver<Bytes>) {
    let mut out = BufWriter::with_capacity(64 * 1024, write);
    while let Some(frame) = rx.recv().await {
        if out.write_all(&frame).await.is_err() {
            rx.close();
            return;
        }
        // batch whatever is already queued before flushing
        while let Ok(frame) = rx.try_recv() {
            if out.write_all(&frame).await.is_err() {
                rx.close();
                return;
            }
        }
        if out.flush().await.is_err() {
            rx.close();
            return;
        }
    }
    let _ = out.shutdown().await;
}

pub struct ObjectReceiver {
    frames: FramedRead<OwnedReadHalf, ObjectCodec>,
}

impl ObjectReceiver {
    /// Next object in arrival order; `None` on a clean close at a frame
    /// boundary, `ConnectionLost` if the peer vanished mid-frame.
    pub async fn recv_object(&mut self) -> Option<Result<JsonObject, WireError>> {
        self.frames.next().await
    }

    pub async fn recv(&mut self) -> Option<Result<Envelope, WireError>> {
        Some(self.recv_object().await?.and_then(Envelope::from_object))
    }
}
