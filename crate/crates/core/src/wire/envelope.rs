use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::codec::JsonObject;
use super::WireError;

/// Closed set of message kinds exchanged between components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageType {
    Register,
    Allocate,
    Allocation,
    Subtask,
    Chunk,
    End,
    Error,
    Next,
    Done,
    Ping,
    Pong,
    Start,
    Stop,
}

impl MessageType {
    pub const ALL: [MessageType; 13] = [
        MessageType::Register,
        MessageType::Allocate,
        MessageType::Allocation,
        MessageType::Subtask,
        MessageType::Chunk,
        MessageType::End,
        MessageType::Error,
        MessageType::Next,
        MessageType::Done,
        MessageType::Ping,
        MessageType::Pong,
        MessageType::Start,
        MessageType::Stop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::Register => "register",
            MessageType::Allocate => "allocate",
            MessageType::Allocation => "allocation",
            MessageType::Subtask => "subtask",
            MessageType::Chunk => "chunk",
            MessageType::End => "end",
            MessageType::Error => "error",
            MessageType::Next => "next",
            MessageType::Done => "done",
            MessageType::Ping => "ping",
            MessageType::Pong => "pong",
            MessageType::Start => "start",
            MessageType::Stop => "stop",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Typed message carried in one frame: `{"type": .., "id": .., "payload": {..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub id: String,
    #[serde(default)]
    pub payload: JsonObject,
}

impl Envelope {
    pub fn new<P: Serialize>(kind: MessageType, id: impl Into<String>, payload: &P) -> Self {
        let payload = match serde_json::to_value(payload) {
            Ok(Value::Object(map)) => map,
            Ok(Value::Null) => JsonObject::new(),
            Ok(other) => {
                let mut map = JsonObject::new();
                map.insert("value".into(), other);
                map
            }
            Err(e) => panic!("payload for {kind} is not serializable: {e}"),
        };
        Self { kind, id: id.into(), payload }
    }

    pub fn empty(kind: MessageType, id: impl Into<String>) -> Self {
        Self { kind, id: id.into(), payload: JsonObject::new() }
    }

    pub fn to_object(&self) -> JsonObject {
        let mut map = JsonObject::new();
        map.insert("type".into(), Value::String(self.kind.as_str().into()));
        map.insert("id".into(), Value::String(self.id.clone()));
        map.insert("payload".into(), Value::Object(self.payload.clone()));
        map
    }

    pub fn from_object(obj: JsonObject) -> Result<Self, WireError> {
        let env: Envelope =
            serde_json::from_value(Value::Object(obj)).map_err(|e| WireError::InvalidEnvelope(e.to_string()))?;
        if env.id.is_empty() {
            return Err(WireError::InvalidEnvelope("empty id".into()));
        }
        Ok(env)
    }

    /// Deserializes the payload into a typed message body.
    pub fn payload_as<T: DeserializeOwned>(&self) -> Result<T, WireError> {
        serde_json::from_value(Value::Object(self.payload.clone()))
            .map_err(|e| WireError::InvalidEnvelope(format!("{} payload: {e}", self.kind)))
    }

    pub fn reply<P: Serialize>(&self, kind: MessageType, payload: &P) -> Self {
        Self::new(kind, self.id.clone(), payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn type_strings_round_trip() {
        for kind in MessageType::ALL {
            let v = serde_json::to_value(kind).unwrap();
            assert_eq!(v, Value::String(kind.as_str().into()));
            assert_eq!(serde_json::from_value::<MessageType>(v).unwrap(), kind);
        }
    }

    #[test]
    fn rejects_unknown_type_and_empty_id() {
        let unknown = json!({"type": "gossip", "id": "1", "payload": {}});
        let Value::Object(unknown) = unknown else { unreachable!() };
        assert!(matches!(Envelope::from_object(unknown), Err(WireError::InvalidEnvelope(_))));

        let no_id = json!({"type": "ping", "id": "", "payload": {}});
        let Value::Object(no_id) = no_id else { unreachable!() };
        assert!(matches!(Envelope::from_object(no_id), Err(WireError::InvalidEnvelope(_))));
    }

    #[test]
    fn object_form() {
        let env = Envelope::new(MessageType::Allocate, "a-1", &json!({"count": 3}));
        let obj = env.to_object();
        assert_eq!(Value::Object(obj.clone()), json!({"type": "allocate", "id": "a-1", "payload": {"count": 3}}));
        assert_eq!(Envelope::from_object(obj).unwrap(), env);
    }
}
