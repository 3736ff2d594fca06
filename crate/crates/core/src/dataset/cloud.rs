//! The cloud-index use case: cloud-top altitude per measurement.

use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::store::{day_key, parse_day};
use super::{DatasetError, Measurement, Store, CHANNELS};
use crate::registry::{ExecutionMode, Handler, QueryParams, RecordSink, Splitter, SubTask, UseCase, UseCaseError};

pub const CLOUD_INDEX_NAME: &str = "cloud-index";
pub const CLOUD_INDEX_URL: &str = "/cloud-index";
pub const DEFAULT_THRESHOLD: f64 = 1.8;

/// Highest altitude whose cloud index on `channel` is strictly below
/// `threshold`, or `None` when no level qualifies.
pub fn cloud_altitude(m: &Measurement, channel: usize, threshold: f64) -> Option<f64> {
    let row = m.cloud_index.get(channel)?;
    // altitudes are strictly increasing, so the first hit from the top is the max
    row.iter().zip(&m.altitudes_km).rev().find(|(ci, _)| **ci < threshold).map(|(_, alt)| *alt)
}

/// One 3-tap moving-average pass; the ends keep their single neighbour.
pub fn smooth_row(row: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let n = row.len();
    for i in 0..n {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(n - 1);
        let span = &row[lo..=hi];
        out.push(span.iter().sum::<f64>() / span.len() as f64);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Flat,
    Grouped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CloudQuery {
    pub from: NaiveDate,
    pub to: NaiveDate,
    #[serde(default)]
    pub channel: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default = "default_work_factor")]
    pub work_factor: u32,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_work_factor() -> u32 {
    1
}

impl CloudQuery {
    pub fn new(from: NaiveDate, to: NaiveDate) -> Self {
        Self { from, to, channel: 0, threshold: DEFAULT_THRESHOLD, format: OutputFormat::Flat, work_factor: 1 }
    }

    /// Parses HTTP query parameters; `from` and `to` are required.
    pub fn from_params(params: &QueryParams) -> Result<Self, UseCaseError> {
        let invalid = |e: DatasetError| UseCaseError::InvalidParams(e.to_string());
        let req = |k: &str| params.get(k).ok_or_else(|| UseCaseError::InvalidParams(format!("missing {k}")));
        let from = parse_day(req("from")?).map_err(invalid)?;
        let to = parse_day(req("to")?).map_err(invalid)?;
        let mut q = Self::new(from, to);
        if let Some(ch) = params.get("channel") {
            q.channel = ch.parse().map_err(|_| UseCaseError::InvalidParams(format!("bad channel {ch:?}")))?;
        }
        if let Some(t) = params.get("threshold") {
            q.threshold = t.parse().map_err(|_| UseCaseError::InvalidParams(format!("bad threshold {t:?}")))?;
        }
        if let Some(f) = params.get("format") {
            q.format = match f.as_str() {
                "flat" => OutputFormat::Flat,
                "grouped" => OutputFormat::Grouped,
                other => return Err(UseCaseError::InvalidParams(format!("unknown format {other:?}"))),
            };
        }
        if let Some(w) = params.get("workFactor").or_else(|| params.get("work_factor")) {
            q.work_factor = w.parse().map_err(|_| UseCaseError::InvalidParams(format!("bad workFactor {w:?}")))?;
        }
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), UseCaseError> {
        if self.channel >= CHANNELS {
            return Err(UseCaseError::InvalidParams(format!("channel must be 0..{}", CHANNELS - 1)));
        }
        if !self.threshold.is_finite() {
            return Err(UseCaseError::InvalidParams("threshold must be finite".into()));
        }
        if self.work_factor == 0 {
            return Err(UseCaseError::InvalidParams("workFactor must be at least 1".into()));
        }
        if self.from >= self.to {
            return Err(UseCaseError::EmptyRange);
        }
        Ok(())
    }

    pub fn with_range(&self, from: NaiveDate, to: NaiveDate) -> Self {
        Self { from, to, ..self.clone() }
    }

    pub fn to_params(&self) -> Value {
        serde_json::to_value(self).expect("query serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CloudRecord {
    pub day: String,
    pub time: chrono::DateTime<chrono::Utc>,
    pub lat: f64,
    pub lon: f64,
    pub cloud_altitude_km: Option<f64>,
}

impl CloudRecord {
    pub fn from_measurement(m: &Measurement, channel: usize, threshold: f64) -> Self {
        Self {
            day: day_key(m.time.date_naive()),
            time: m.time,
            lat: m.lat,
            lon: m.lon,
            cloud_altitude_km: cloud_altitude(m, channel, threshold),
        }
    }
}

/// Back-end handler: reads the range from the store and emits one record
/// per measurement (flat) or one object per day (grouped).
pub struct CloudIndexHandler {
    store: Arc<Store>,
}

impl CloudIndexHandler {
    pub fn new(store: Arc<Store>) -> Self {
        Self { store }
    }

    /// Burns `work_factor` smoothing passes over the selected row. The
    /// threshold is applied to the original row, so output never depends on it.
    fn load(row: &[f64], work_factor: u32, scratch: &mut (Vec<f64>, Vec<f64>)) -> f64 {
        let (a, b) = scratch;
        a.clear();
        a.extend_from_slice(row);
        for _ in 0..work_factor {
            smooth_row(a, b);
            std::mem::swap(a, b);
        }
        std::hint::black_box(a.iter().sum())
    }
}

impl Handler for CloudIndexHandler {
    fn handle(&self, params: &Value, sink: &mut dyn RecordSink) -> Result<(), UseCaseError> {
        let q: CloudQuery =
            serde_json::from_value(params.clone()).map_err(|e| UseCaseError::InvalidParams(e.to_string()))?;
        q.validate()?;
        let measurements = self.store.query_range(q.from, q.to).map_err(dataset_to_usecase)?;
        let mut scratch = (Vec::new(), Vec::new());
        let mut group: Option<(String, Vec<Value>)> = None;
        for m in measurements {
            let m = m.map_err(dataset_to_usecase)?;
            Self::load(&m.cloud_index[q.channel], q.work_factor, &mut scratch);
            let record = CloudRecord::from_measurement(&m, q.channel, q.threshold);
            match q.format {
                OutputFormat::Flat => sink.emit(serde_json::to_value(&record).expect("record serializes"))?,
                OutputFormat::Grouped => {
                    if group.as_ref().is_some_and(|(day, _)| *day != record.day) {
                        let (day, records) = group.take().expect("checked");
                        sink.emit(json!({ "day": day, "records": records }))?;
                    }
                    let entry = group.get_or_insert_with(|| (record.day.clone(), Vec::new()));
                    entry.1.push(serde_json::to_value(&record).expect("record serializes"));
                }
            }
        }
        if let Some((day, records)) = group {
            sink.emit(json!({ "day": day, "records": records }))?;
        }
        Ok(())
    }
}

fn dataset_to_usecase(e: DatasetError) -> UseCaseError {
    match e {
        DatasetError::EmptyRange => UseCaseError::EmptyRange,
        other => UseCaseError::Failed(other.to_string()),
    }
}

/// Front-end splitter: contiguous day ranges balanced by the count index
/// (concurrent) or one sub-task per day (iterative).
pub struct CloudIndexSplitter {
    store: Arc<Store>,
}

impl CloudIndexSplitter {
    pub fn new(store: Arc<Store>) -> Self {
        Self { store }
    }

    fn subtask(&self, idx: usize, q: &CloudQuery, mode: ExecutionMode) -> SubTask {
        SubTask { usecase_name: CLOUD_INDEX_NAME.into(), params: q.to_params(), subtask_id: idx.to_string(), mode }
    }
}

impl Splitter for CloudIndexSplitter {
    fn estimate(&self, query: &QueryParams) -> Result<u64, UseCaseError> {
        let q = CloudQuery::from_params(query)?;
        Ok(self.store.count_between(q.from, q.to))
    }

    fn split(&self, query: &QueryParams, servers: usize, mode: ExecutionMode) -> Result<Vec<SubTask>, UseCaseError> {
        let q = CloudQuery::from_params(query)?;
        let days = self.store.day_counts(q.from, q.to);
        let ranges = match mode {
            ExecutionMode::Iterative => days.iter().map(|(d, _)| (*d, d.succ_opt().expect("date in range"))).collect(),
            ExecutionMode::Concurrent => {
                let weights: Vec<u64> = days.iter().map(|(_, c)| *c).collect();
                balanced_boundaries(&weights, servers.max(1))
                    .windows(2)
                    .map(|w| (days[w[0]].0, days[w[1] - 1].0.succ_opt().expect("date in range")))
                    .collect::<Vec<_>>()
            }
        };
        Ok(ranges
            .into_iter()
            .enumerate()
            .map(|(i, (from, to))| self.subtask(i, &q.with_range(from, to), mode))
            .collect())
    }
}

/// Cuts `weights` into `min(parts, len)` contiguous non-empty pieces whose
/// sums are as even as the item granularity allows. Returns the cut indices
/// including `0` and `len`. Zero weights count as 1 so empty days still spread.
pub(crate) fn balanced_boundaries(weights: &[u64], parts: usize) -> Vec<usize> {
    let n = weights.len();
    let k = parts.min(n).max(1);
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0u128);
    for w in weights {
        prefix.push(prefix.last().unwrap() + u128::from((*w).max(1)));
    }
    let total = prefix[n];
    let mut cuts = vec![0usize];
    for j in 1..k {
        let target = j as u128 * total;
        let lo = cuts[j - 1] + 1;
        let hi = n - (k - j);
        // nearest prefix to j/k of the total, ties to the left
        let best = (lo..=hi).min_by_key(|&i| (prefix[i] * k as u128).abs_diff(target)).expect("non-empty window");
        cuts.push(best);
    }
    cuts.push(n);
    cuts
}

pub fn cloud_index_use_case(store: Arc<Store>) -> UseCase {
    UseCase {
        url: CLOUD_INDEX_URL.into(),
        name: CLOUD_INDEX_NAME.into(),
        splitter: Arc::new(CloudIndexSplitter::new(store.clone())),
        handler: Arc::new(CloudIndexHandler::new(store)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn measurement(rows: [Vec<f64>; 3]) -> Measurement {
        let levels = rows[0].len();
        Measurement {
            id: "m".into(),
            time: "2012-01-01T00:00:00Z".parse().unwrap(),
            lat: 0.0,
            lon: 0.0,
            altitudes_km: (0..levels).map(|i| 6.0 + 2.0 * i as f64).collect(),
            cloud_index: rows.to_vec(),
        }
    }

    fn scan_oracle(m: &Measurement, channel: usize, threshold: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for i in 0..m.altitudes_km.len() {
            if m.cloud_index[channel][i] < threshold {
                best = Some(best.map_or(m.altitudes_km[i], |b: f64| b.max(m.altitudes_km[i])));
            }
        }
        best
    }

    #[test]
    fn no_level_below_threshold() {
        let m = measurement([vec![2.0, 3.0, 4.0], vec![1.8; 3], vec![9.0; 3]]);
        assert_eq!(cloud_altitude(&m, 0, 1.8), None);
        // strict comparison: equal to threshold does not qualify
        assert_eq!(cloud_altitude(&m, 1, 1.8), None);
    }

    #[test]
    fn single_qualifying_level() {
        let m = measurement([vec![5.0, 0.5, 5.0, 5.0], vec![5.0; 4], vec![5.0; 4]]);
        assert_eq!(cloud_altitude(&m, 0, 1.8), Some(8.0));
        assert_eq!(cloud_altitude(&m, 2, 1.8), None);
    }

    proptest! {
        #[test]
        fn matches_linear_scan(
            rows in prop::array::uniform3(prop::collection::vec(0.0f64..10.0, 31)),
            channel in 0usize..3,
            threshold in -1.0f64..11.0,
        ) {
            let m = measurement(rows);
            prop_assert_eq!(cloud_altitude(&m, channel, threshold), scan_oracle(&m, channel, threshold));
        }

        #[test]
        fn boundaries_are_contiguous_nonempty(weights in prop::collection::vec(0u64..5000, 1..60), parts in 1usize..12) {
            let cuts = balanced_boundaries(&weights, parts);
            prop_assert_eq!(cuts.len(), parts.min(weights.len()) + 1);
            prop_assert_eq!(cuts[0], 0);
            prop_assert_eq!(*cuts.last().unwrap(), weights.len());
            prop_assert!(cuts.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn thirty_equal_days_over_four() {
        let cuts = balanced_boundaries(&[2000; 30], 4);
        let mut sizes: Vec<_> = cuts.windows(2).map(|w| w[1] - w[0]).collect();
        sizes.sort();
        assert_eq!(sizes, vec![7, 7, 8, 8]);
    }

    #[test]
    fn skewed_days_balance_by_count() {
        // one heavy day followed by light ones
        let mut w = vec![100u64; 10];
        w[0] = 900;
        let cuts = balanced_boundaries(&w, 2);
        assert_eq!(cuts, vec![0, 1, 10]);
    }

    #[test]
    fn query_param_parsing() {
        let mut p = QueryParams::new();
        p.insert("from".into(), "2012-01-01".into());
        p.insert("to".into(), "2012-01-31".into());
        let q = CloudQuery::from_params(&p).unwrap();
        assert_eq!((q.channel, q.threshold, q.format, q.work_factor), (0, 1.8, OutputFormat::Flat, 1));

        p.insert("channel".into(), "3".into());
        assert!(matches!(CloudQuery::from_params(&p), Err(UseCaseError::InvalidParams(_))));
        p.insert("channel".into(), "2".into());
        p.insert("format".into(), "grouped".into());
        p.insert("threshold".into(), "2.5".into());
        let q = CloudQuery::from_params(&p).unwrap();
        assert_eq!((q.channel, q.threshold, q.format), (2, 2.5, OutputFormat::Grouped));

        p.insert("to".into(), "2012-01-01".into());
        assert_eq!(CloudQuery::from_params(&p), Err(UseCaseError::EmptyRange));
        p.remove("from");
        assert!(matches!(CloudQuery::from_params(&p), Err(UseCaseError::InvalidParams(_))));
    }

    #[test]
    fn smoothing_preserves_constant_rows() {
        let mut out = Vec::new();
        smooth_row(&[2.0; 5], &mut out);
        assert_eq!(out, vec![2.0; 5]);
        smooth_row(&[0.0, 3.0, 0.0], &mut out);
        assert_eq!(out, vec![1.5, 1.0, 1.5]);
    }
}
