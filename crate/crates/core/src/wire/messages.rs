//! Payload bodies for each envelope type.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::registry::SubTask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegisterAction {
    #[default]
    Add,
    Remove,
}

/// `register`: a back-end announcing itself, or the controller evicting one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegisterMsg {
    pub host: String,
    pub port: u16,
    #[serde(default)]
    pub action: RegisterAction,
}

/// `allocate`: `count` absent means one entry per registered back-end.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AllocateMsg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BackendAddr {
    pub backend_id: String,
    pub host: String,
    pub port: u16,
}

impl BackendAddr {
    pub fn endpoint(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

/// `allocation`: answer to both `allocate` and `register`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AllocationMsg {
    pub servers: Vec<BackendAddr>,
    pub registered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubtaskMsg {
    pub request_id: String,
    pub subtask: SubTask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker_slot_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChunkMsg {
    pub request_id: String,
    pub subtask_id: String,
    pub seq: u64,
    pub records: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndMsg {
    pub request_id: String,
    pub subtask_id: String,
    pub record_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ErrorMsg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask_id: Option<String>,
    pub message: String,
}

/// `next` (back-end asks for more work) and `done` (slot retires) share a body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SlotMsg {
    pub request_id: String,
    pub worker_slot_id: String,
}

/// `pong` body; components report their role and counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PongMsg {
    pub role: String,
    pub pid: u32,
    #[serde(default)]
    pub stats: Value,
}
