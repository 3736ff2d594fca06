//! Use-case definitions and lookup by URL (front-end) or name (back-end).

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub type QueryParams = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutionMode {
    #[default]
    Concurrent,
    Iterative,
}

impl std::str::FromStr for ExecutionMode {
    type Err = UseCaseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concurrent" => Ok(ExecutionMode::Concurrent),
            "iterative" => Ok(ExecutionMode::Iterative),
            other => Err(UseCaseError::InvalidParams(format!("unknown mode {other:?}"))),
        }
    }
}

/// One back-end work item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubTask {
    pub usecase_name: String,
    pub params: Value,
    pub subtask_id: String,
    pub mode: ExecutionMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UseCaseError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("empty range: from must be before to")]
    EmptyRange,
    #[error("record sink closed")]
    SinkClosed,
    #[error("{0}")]
    Failed(String),
}

/// Receives the records a handler produces, one complete object at a time.
pub trait RecordSink {
    fn emit(&mut self, record: Value) -> Result<(), UseCaseError>;
}

impl RecordSink for Vec<Value> {
    fn emit(&mut self, record: Value) -> Result<(), UseCaseError> {
        self.push(record);
        Ok(())
    }
}

/// Front-end half of a use case: sizes a request and divides it.
pub trait Splitter: Send + Sync {
    /// Approximate number of documents the request touches.
    fn estimate(&self, query: &QueryParams) -> Result<u64, UseCaseError>;

    /// Divides the request into sub-tasks for `servers` allocated back-ends.
    /// Sub-task ids only need to be unique within the returned list.
    fn split(&self, query: &QueryParams, servers: usize, mode: ExecutionMode) -> Result<Vec<SubTask>, UseCaseError>;
}

/// Back-end half of a use case.
pub trait Handler: Send + Sync {
    fn handle(&self, params: &Value, sink: &mut dyn RecordSink) -> Result<(), UseCaseError>;
}

#[derive(Clone)]
pub struct UseCase {
    pub url: String,
    pub name: String,
    pub splitter: Arc<dyn Splitter>,
    pub handler: Arc<dyn Handler>,
}

impl fmt::Debug for UseCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UseCase").field("url", &self.url).field("name", &self.name).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("use case name {0:?} already registered")]
    DuplicateName(String),
    #[error("use case url {0:?} already registered")]
    DuplicateUrl(String),
    #[error("unknown use case {0:?}")]
    UnknownUseCase(String),
}

#[derive(Default)]
struct Tables {
    by_name: HashMap<String, Arc<UseCase>>,
    name_by_url: HashMap<String, String>,
}

/// Thread-safe use-case table. Registration is allowed at any time and is
/// visible to the next lookup.
#[derive(Default, Clone)]
pub struct Registry {
    tables: Arc<RwLock<Tables>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, uc: UseCase) -> Result<(), RegistryError> {
        let url = normalize_url(&uc.url);
        let mut t = self.tables.write().expect("registry lock poisoned");
        if t.by_name.contains_key(&uc.name) {
            return Err(RegistryError::DuplicateName(uc.name));
        }
        if t.name_by_url.contains_key(&url) {
            return Err(RegistryError::DuplicateUrl(url));
        }
        t.name_by_url.insert(url.clone(), uc.name.clone());
        t.by_name.insert(uc.name.clone(), Arc::new(UseCase { url, ..uc }));
        Ok(())
    }

    pub fn lookup_by_name(&self, name: &str) -> Result<Arc<UseCase>, RegistryError> {
        let t = self.tables.read().expect("registry lock poisoned");
        t.by_name.get(name).cloned().ok_or_else(|| RegistryError::UnknownUseCase(name.to_string()))
    }

    pub fn lookup_by_url(&self, url: &str) -> Result<Arc<UseCase>, RegistryError> {
        let url = normalize_url(url);
        let t = self.tables.read().expect("registry lock poisoned");
        t.name_by_url.get(&url).and_then(|name| t.by_name.get(name)).cloned().ok_or(RegistryError::UnknownUseCase(url))
    }

    pub fn names(&self) -> Vec<String> {
        let t = self.tables.read().expect("registry lock poisoned");
        let mut names: Vec<_> = t.by_name.keys().cloned().collect();
        names.sort();
        names
    }

    pub fn len(&self) -> usize {
        self.tables.read().expect("registry lock poisoned").by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn normalize_url(url: &str) -> String {
    let trimmed = url.trim_end_matches('/');
    if trimmed.starts_with('/') {
        trimmed.to_string()
    } else {
        format!("/{trimmed}")
    }
}
