//! Length-prefixed JSON framing.
//!
//! Every frame is a 4-byte big-endian body length followed by the UTF-8 JSON
//! text of exactly one object. Bodies above [`MAX_FRAME_LEN`] are rejected on
//! both ends. A malformed or oversize frame poisons the decoder: once the
//! length prefix cannot be trusted there is no way to find the next boundary.

use bytes::{Buf, BufMut, Bytes, BytesMut};
use serde_json::{Map, Value};
use tokio_util::codec::{Decoder, Encoder};

use super::WireError;

/// Largest accepted frame body, in bytes.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

const HEADER_LEN: usize = 4;

pub type JsonObject = Map<String, Value>;

/// Serializes `obj` into a single frame.
pub fn encode_frame(obj: &JsonObject) -> Result<Bytes, WireError> {
    let mut out = BytesMut::new();
    encode_into(obj, &mut out)?;
    Ok(out.freeze())
}

fn encode_into(obj: &JsonObject, dst: &mut BytesMut) -> Result<(), WireError> {
    let body = serde_json::to_vec(obj).map_err(|e| WireError::MalformedBody(e.to_string()))?;
    if body.len() > MAX_FRAME_LEN {
        return Err(WireError::OversizeFrame(body.len()));
    }
    dst.reserve(HEADER_LEN + body.len());
    dst.put_u32(body.len() as u32);
    dst.put_slice(&body);
    Ok(())
}

/// Pops one complete frame off the front of `buf`, if there is one.
fn decode_one(buf: &mut BytesMut) -> Result<Option<JsonObject>, WireError> {
    if buf.len() < HEADER_LEN {
        return Ok(None);
    }
    let declared = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if declared > MAX_FRAME_LEN {
        return Err(WireError::OversizeFrame(declared));
    }
    if buf.len() < HEADER_LEN + declared {
        buf.reserve(HEADER_LEN + declared - buf.len());
        return Ok(None);
    }
    buf.advance(HEADER_LEN);
    let body = buf.split_to(declared);
    let text = std::str::from_utf8(&body).map_err(|e| WireError::MalformedBody(e.to_string()))?;
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Ok(Some(map)),
        Ok(other) => {
            Err(WireError::MalformedBody(format!("top-level JSON value must be an object, got {}", json_kind(&other))))
        }
        Err(e) => Err(WireError::MalformedBody(e.to_string())),
    }
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Incremental decoder fed with arbitrary chunks of a byte stream.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: BytesMut,
    poisoned: Option<WireError>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `chunk` and returns every frame completed by it, in order.
    ///
    /// After the first error the decoder stays poisoned and every later call
    /// returns that same error.
    pub fn push(&mut self, chunk: &[u8]) -> Result<Vec<JsonObject>, WireError> {
        if let Some(err) = &self.poisoned {
            return Err(err.clone());
        }
        self.buf.extend_from_slice(chunk);
        let mut out = Vec::new();
        loop {
            match decode_one(&mut self.buf) {
                Ok(Some(obj)) => out.push(obj),
                Ok(None) => return Ok(out),
                Err(e) => {
                    self.poisoned = Some(e.clone());
                    return Err(e);
                }
            }
        }
    }

    /// Bytes received but not yet part of a complete frame.
    pub fn pending_bytes(&self) -> usize {
        self.buf.len()
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned.is_some()
    }
}

/// Decodes a complete byte sequence into its frames.
pub fn decode_frames(bytes: &[u8]) -> Result<Vec<JsonObject>, WireError> {
    let mut dec = FrameDecoder::new();
    let out = dec.push(bytes)?;
    if dec.pending_bytes() > 0 {
        return Err(WireError::ConnectionLost);
    }
    Ok(out)
}

/// `tokio_util` codec over the same framing, used by [`super::ObjectConnection`].
#[derive(Debug, Default)]
pub struct ObjectCodec {
    poisoned: bool,
}

impl Decoder for ObjectCodec {
    type Item = JsonObject;
    type Error = WireError;

    fn decode(&mut self, src: &mut BytesMut) -> Result<Option<JsonObject>, WireError> {
        if self.poisoned {
            return Err(WireError::MalformedBody("connection poisoned by an earlier frame error".into()));
        }
        decode_one(src).inspect_err(|_| self.poisoned = true)
    }

    fn decode_eof(&mut self, src: &mut BytesMut) -> Result<Option<JsonObject>, WireError> {
        match self.decode(src)? {
            Some(frame) => Ok(Some(frame)),
            None if src.is_empty() => Ok(None),
            None => Err(WireError::ConnectionLost),
        }
    }
}

impl Encoder<&JsonObject> for ObjectCodec {
    type Error = WireError;

    fn encode(&mut self, item: &JsonObject, dst: &mut BytesMut) -> Result<(), WireError> {
        encode_into(item, dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn obj(v: Value) -> JsonObject {
        match v {
            Value::Object(m) => m,
            _ => unreachable!(),
        }
    }

    #[test]
    fn empty_object_frame_bytes() {
        let frame = encode_frame(&JsonObject::new()).unwrap();
        assert_eq!(&frame[..], &[0x00, 0x00, 0x00, 0x02, 0x7B, 0x7D]);
    }

    #[test]
    fn header_matches_independent_serializer() {
        let ping = obj(json!({"type": "ping", "id": "1", "payload": {}}));
        let frame = encode_frame(&ping).unwrap();
        // serde_json::Value's Display is a separate serialization path.
        let text = Value::Object(ping.clone()).to_string();
        let declared = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
        assert_eq!(declared, text.len());
        assert_eq!(&frame[4..], text.as_bytes());
    }

    #[test]
    fn oversize_by_one_byte_is_rejected() {
        // {"a":"..."} has 8 bytes of framing around the string
        let filler = "x".repeat(MAX_FRAME_LEN + 1 - 8);
        let big = obj(json!({ "a": filler }));
        assert_eq!(serde_json::to_vec(&big).unwrap().len(), MAX_FRAME_LEN + 1);
        assert!(matches!(encode_frame(&big), Err(WireError::OversizeFrame(n)) if n == MAX_FRAME_LEN + 1));

        let exact = obj(json!({ "a": "x".repeat(MAX_FRAME_LEN - 8) }));
        let frame = encode_frame(&exact).unwrap();
        assert_eq!(decode_frames(&frame).unwrap(), vec![exact]);
    }

    #[test]
    fn two_frames_in_one_chunk() {
        let x = obj(json!({"a": 1}));
        let y = obj(json!({"b": [true, null]}));
        let mut bytes = encode_frame(&x).unwrap().to_vec();
        bytes.extend_from_slice(&encode_frame(&y).unwrap());
        assert_eq!(decode_frames(&bytes).unwrap(), vec![x, y]);
    }

    #[test]
    fn byte_at_a_time_feed() {
        let x = obj(json!({"type": "chunk", "id": "r/0", "payload": {"records": [{"k": "ü"}]}}));
        let bytes = encode_frame(&x).unwrap();
        let mut dec = FrameDecoder::new();
        let mut got = Vec::new();
        for b in bytes.iter() {
            got.extend(dec.push(std::slice::from_ref(b)).unwrap());
        }
        assert_eq!(got, vec![x]);
        assert_eq!(dec.pending_bytes(), 0);
    }

    #[test]
    fn max_declared_length_is_oversize() {
        let mut dec = FrameDecoder::new();
        let err = dec.push(&[0xFF, 0xFF, 0xFF, 0xFF]).unwrap_err();
        assert!(matches!(err, WireError::OversizeFrame(0xFFFF_FFFF)));
        // poisoned: even a valid frame is refused afterwards
        let ok = encode_frame(&JsonObject::new()).unwrap();
        assert!(dec.push(&ok).is_err());
        assert!(dec.is_poisoned());
    }

    #[test]
    fn malformed_bodies() {
        for body in [&b"{\"a\":"[..], b"[1,2]", b"42", &[0xC3, 0x28][..]] {
            let mut bytes = (body.len() as u32).to_be_bytes().to_vec();
            bytes.extend_from_slice(body);
            let err = decode_frames(&bytes).unwrap_err();
            assert!(matches!(err, WireError::MalformedBody(_)), "{body:?} -> {err:?}");
        }
    }

    #[test]
    fn truncated_stream_reports_lost() {
        let bytes = encode_frame(&obj(json!({"a": 1}))).unwrap();
        assert!(matches!(decode_frames(&bytes[..bytes.len() - 1]), Err(WireError::ConnectionLost)));
    }
}
