//! HTTP load generator, latency statistics and CSV reports.

mod resources;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use resources::{
    mean_cpu_by_role, read_resources_csv, sample_resources, sample_resources_until, write_resources_csv, ProcStat,
    ResourceLog, ResourceSample, RESOURCES_HEADER,
};

pub const SAMPLES_HEADER: [&str; 5] = ["requestIndex", "startMs", "latencyMs", "bytes", "httpStatus"];

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("invalid load profile: {0}")]
    InvalidProfile(String),
    #[error("{path}: expected header {expected}, found {found}")]
    SchemaMismatch { path: String, expected: String, found: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("http client: {0}")]
    Client(String),
}

#[derive(Debug, Clone)]
pub struct LoadProfile {
    pub target_urls: Vec<String>,
    pub concurrency: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub cooldown: usize,
    /// Sends `Accept-Encoding: gzip`. Bodies are never decoded.
    pub gzip: bool,
    pub request_timeout: Duration,
}

impl LoadProfile {
    pub fn new(url: impl Into<String>, concurrency: usize, repetitions: usize) -> Self {
        Self {
            target_urls: vec![url.into()],
            concurrency,
            repetitions,
            warmup: 0,
            cooldown: 0,
            gzip: false,
            request_timeout: Duration::from_secs(600),
        }
    }

    pub fn validate(&self) -> Result<(), LoadError> {
        let bad = |m: &str| Err(LoadError::InvalidProfile(m.into()));
        if self.target_urls.is_empty() {
            return bad("at least one target URL is required");
        }
        if self.concurrency == 0 {
            return bad("concurrency must be positive");
        }
        if self.repetitions <= self.warmup + self.cooldown {
            return bad("repetitions must exceed warmup + cooldown");
        }
        Ok(())
    }

    fn retained(&self, index: usize) -> bool {
        index >= self.warmup && index < self.repetitions - self.cooldown
    }
}

/// One request. `httpStatus` 0 means the transfer failed (no response, or
/// the body stream broke).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LatencySample {
    pub request_index: usize,
    pub start_ms: f64,
    pub latency_ms: f64,
    pub bytes: u64,
    pub http_status: u16,
}

impl LatencySample {
    pub fn ok(&self) -> bool {
        self.http_status == 200 && self.bytes > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Aggregate {
    pub samples: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub throughput_rps: f64,
    pub error_count: usize,
}

/// Statistics over a sample set. Failed requests only count as errors.
pub fn aggregate(samples: &[LatencySample]) -> Aggregate {
    let mut lat: Vec<f64> = samples.iter().filter(|s| s.ok()).map(|s| s.latency_ms).collect();
    lat.sort_by(f64::total_cmp);
    let n = lat.len();
    let mean_ms = if n == 0 { 0.0 } else { lat.iter().sum::<f64>() / n as f64 };
    let median_ms = match n {
        0 => 0.0,
        _ if n % 2 == 1 => lat[n / 2],
        _ => (lat[n / 2 - 1] + lat[n / 2]) / 2.0,
    };
    let p95_ms = if n == 0 { 0.0 } else { lat[((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1] };
    let first = samples.iter().map(|s| s.start_ms).fold(f64::INFINITY, f64::min);
    let last = samples.iter().map(|s| s.start_ms + s.latency_ms).fold(f64::NEG_INFINITY, f64::max);
    let span = last - first;
    let throughput_rps = if n > 0 && span > 0.0 { n as f64 / (span / 1000.0) } else { 0.0 };
    Aggregate { samples: n, mean_ms, median_ms, p95_ms, throughput_rps, error_count: samples.len() - n }
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub aggregate: Aggregate,
    /// Highest number of simultaneously outstanding requests.
    pub max_in_flight: usize,
    /// Aggregated samples (warm-up and cool-down removed).
    pub samples: Vec<LatencySample>,
    pub all_samples: Vec<LatencySample>,
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Runs `repetitions` requests keeping `concurrency` of them outstanding,
/// cycling through the target URLs by request index.
pub async fn run_load(profile: &LoadProfile) -> Result<LoadReport, LoadError> {
    profile.validate()?;
    let client = reqwest::Client::builder()
        .timeout(profile.request_timeout)
        .build()
        .map_err(|e| LoadError::Client(e.to_string()))?;
    let next = Arc::new(AtomicUsize::new(0));
    let in_flight = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let t0 = Instant::now();
    let workers = (0..profile.concurrency.min(profile.repetitions)).map(|_| {
        let (client, next, in_flight, peak) = (client.clone(), next.clone(), in_flight.clone(), peak.clone());
        let profile = profile.clone();
        tokio::spawn(async move {
            let mut out = Vec::new();
            loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= profile.repetitions {
                    return out;
                }
                let url = &profile.target_urls[i % profile.target_urls.len()];
                let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                let start = Instant::now();
                let (status, bytes) = one_request(&client, url, profile.gzip).await;
                let latency = start.elapsed();
                in_flight.fetch_sub(1, Ordering::SeqCst);
                out.push(LatencySample {
                    request_index: i,
                    start_ms: round3((start - t0).as_secs_f64() * 1000.0),
                    latency_ms: round3(latency.as_secs_f64() * 1000.0),
                    bytes,
                    http_status: status,
                });
            }
        })
    });
    let mut all_samples = Vec::with_capacity(profile.repetitions);
    for w in futures::future::join_all(workers).await {
        all_samples.extend(w.map_err(|e| LoadError::Client(e.to_string()))?);
    }
    all_samples.sort_by_key(|s| s.request_index);
    let samples: Vec<LatencySample> =
        all_samples.iter().filter(|s| profile.retained(s.request_index)).cloned().collect();
    Ok(LoadReport { aggregate: aggregate(&samples), max_in_flight: peak.load(Ordering::SeqCst), samples, all_samples })
}

async fn one_request(client: &reqwest::Client, url: &str, gzip: bool) -> (u16, u64) {
    let mut req = client.get(url);
    if gzip {
        req = req.header("accept-encoding", "gzip");
    }
    let resp = match req.send().await {
        Ok(r) => r,
        Err(_) => return (0, 0),
    };
    let status = resp.status().as_u16();
    let mut bytes = 0u64;
    let mut body = resp.bytes_stream();
    while let Some(chunk) = body.next().await {
        match chunk {
            Ok(c) => bytes += c.len() as u64,
            Err(_) => return (0, bytes),
        }
    }
    (status, bytes)
}

pub fn write_samples_csv(path: &Path, samples: &[LatencySample]) -> Result<(), LoadError> {
    let mut w = csv::Writer::from_path(path)?;
    if samples.is_empty() {
        w.write_record(SAMPLES_HEADER)?;
    }
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn check_header(
    path: &Path,
    rdr: &mut csv::Reader<std::fs::File>,
    expected: &[&str],
) -> Result<(), LoadError> {
    let found = rdr.headers()?.clone();
    if found.iter().ne(expected.iter().copied()) {
        return Err(LoadError::SchemaMismatch {
            path: path.display().to_string(),
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

pub fn read_samples_csv(path: &Path) -> Result<Vec<LatencySample>, LoadError> {
    let mut rdr = csv::Reader::from_path(path)?;
    check_header(path, &mut rdr, &SAMPLES_HEADER)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row.map_err(|e| LoadError::SchemaMismatch {
            path: path.display().to_string(),
            expected: SAMPLES_HEADER.join(","),
            found: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Candidate relative to baseline: a latency ratio below 1 means faster.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Comparison {
    pub baseline: Aggregate,
    pub candidate: Aggregate,
    pub mean_latency_ratio: f64,
    pub throughput_ratio: f64,
}

pub fn compare(baseline: &[LatencySample], candidate: &[LatencySample]) -> Comparison {
    let (b, c) = (aggregate(baseline), aggregate(candidate));
    Comparison {
        mean_latency_ratio: c.mean_ms / b.mean_ms,
        throughput_ratio: c.throughput_rps / b.throughput_rps,
        baseline: b,
        candidate: c,
    }
}

pub fn compare_runs(baseline_csv: &Path, candidate_csv: &Path) -> Result<Comparison, LoadError> {
    Ok(compare(&read_samples_csv(baseline_csv)?, &read_samples_csv(candidate_csv)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: usize, start: f64, lat: f64, status: u16) -> LatencySample {
        LatencySample { request_index: i, start_ms: start, latency_ms: lat, bytes: 10, http_status: status }
    }

    #[test]
    fn aggregate_statistics() {
        let s: Vec<_> = (0..20).map(|i| sample(i, i as f64 * 100.0, (i + 1) as f64 * 10.0, 200)).collect();
        let a = aggregate(&s);
        assert_eq!(a.samples, 20);
        assert!((a.mean_ms - 105.0).abs() < 1e-9);
        assert!((a.median_ms - 105.0).abs() < 1e-9);
        assert_eq!(a.p95_ms, 190.0);
        // 20 requests from 0 ms to 1900 + 200 ms
        assert!((a.throughput_rps - 20.0 / 2.1).abs() < 1e-9);
    }

    #[test]
    fn errors_are_excluded_from_latency() {
        let s = vec![sample(0, 0.0, 10.0, 200), sample(1, 0.0, 5000.0, 502), sample(2, 0.0, 30.0, 0)];
        let a = aggregate(&s);
        assert_eq!((a.samples, a.error_count), (1, 2));
        assert_eq!(a.mean_ms, 10.0);
    }

    #[test]
    fn warmup_and_cooldown_window() {
        let mut p = LoadProfile::new("http://x", 1, 20);
        p.warmup = 1;
        p.cooldown = 1;
        assert_eq!((0..20).filter(|&i| p.retained(i)).count(), 18);
        p.cooldown = 19;
        assert!(p.validate().is_err());
    }

    #[test]
    fn csv_round_trip_reaggregates_identically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        let s: Vec<_> = (0..7).map(|i| sample(i, i as f64 * 1.5, 3.25 + i as f64, 200)).collect();
        write_samples_csv(&path, &s).unwrap();
        let header = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header, "requestIndex,startMs,latencyMs,bytes,httpStatus");
        let back = read_samples_csv(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(aggregate(&back), aggregate(&s));
        let cmp = compare_runs(&path, &path).unwrap();
        assert_eq!((cmp.mean_latency_ratio, cmp.throughput_ratio), (1.0, 1.0));
    }

    #[test]
    fn wrong_header_is_schema_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "index,latency\n1,2\n").unwrap();
        assert!(matches!(read_samples_csv(&path), Err(LoadError::SchemaMismatch { .. })));
    }
}
