//! Synthetic climate-metadata store and the cloud-index use case.
//!
//! The store is a directory of per-day NDJSON partitions plus `index.json`,
//! a `{day: count}` map that gives front-ends an O(1) size estimate and lets
//! the splitter balance sub-ranges without reading any partition.

mod cloud;
mod generate;
mod store;

pub use cloud::{
    cloud_altitude, cloud_index_use_case, smooth_row, CloudIndexHandler, CloudIndexSplitter, CloudQuery, CloudRecord,
    OutputFormat, CLOUD_INDEX_NAME, CLOUD_INDEX_URL, DEFAULT_THRESHOLD,
};
pub use generate::{generate, generate_day, GenerationConfig};
pub use store::{day_key, parse_day, Store, INDEX_FILE};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHANNELS: usize = 3;

/// One synthetic measurement document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Measurement {
    pub id: String,
    pub time: DateTime<Utc>,
    pub lat: f64,
    pub lon: f64,
    pub altitudes_km: Vec<f64>,
    /// `CHANNELS` rows, each with one value per altitude level.
    pub cloud_index: Vec<Vec<f64>>,
}

impl Measurement {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(DatasetError::Invalid(format!("{}: coordinates out of range", self.id)));
        }
        if self.altitudes_km.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DatasetError::Invalid(format!("{}: altitudes not strictly increasing", self.id)));
        }
        let levels = self.altitudes_km.len();
        if self.cloud_index.len() != CHANNELS || self.cloud_index.iter().any(|row| row.len() != levels) {
            return Err(DatasetError::Invalid(format!("{}: cloud index must be {CHANNELS} x {levels}", self.id)));
        }
        if self.cloud_index.iter().flatten().any(|v| *v < 0.0) {
            return Err(DatasetError::Invalid(format!("{}: negative cloud index", self.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("empty range: from must be before to")]
    EmptyRange,
    #[error("missing partition for {0}")]
    MissingPartition(String),
    #[error("i/o failure: {0}")]
    IoFailure(String),
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("invalid: {0}")]
    Invalid(String),
}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::IoFailure(e.to_string())
    }
}
