//! Object transport between components: framing, envelopes and connections.

mod codec;
mod connection;
mod envelope;
pub mod messages;

pub use codec::{decode_frames, encode_frame, FrameDecoder, JsonObject, ObjectCodec, MAX_FRAME_LEN};
pub use connection::{ObjectConnection, ObjectReceiver, ObjectSender};
pub use envelope::{Envelope, MessageType};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("frame body of {0} bytes exceeds the {MAX_FRAME_LEN}-byte cap")]
    OversizeFrame(usize),
    #[error("malformed frame body: {0}")]
    MalformedBody(String),
    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),
    #[error("connection refused: {0}")]
    ConnectionRefused(String),
    #[error("connection lost")]
    ConnectionLost,
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for WireError {
    fn from(e: std::io::Error) -> Self {
        use std::io::ErrorKind::*;
        match e.kind() {
            ConnectionReset | ConnectionAborted | BrokenPipe | UnexpectedEof => WireError::ConnectionLost,
            _ => WireError::Io(e.to_string()),
        }
    }
}
