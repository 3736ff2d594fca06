#![allow(dead_code)]

use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use flate2::read::GzDecoder;
use serde_json::Value;

use scatterd::dataset::{generate, CloudRecord, GenerationConfig, Store};

pub fn day(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

pub fn make_dataset(dir: &Path, seed: u64, from: &str, to: &str, docs_per_day: u32) {
    let mut cfg = GenerationConfig::new(seed, day(from), day(to));
    cfg.docs_per_day = docs_per_day;
    generate(&cfg, dir).unwrap();
}

/// Straight linear scan of the store, no splitting involved.
pub fn serial_oracle(dir: &Path, from: &str, to: &str, channel: usize, threshold: f64) -> Vec<Value> {
    let store = Store::open(dir).unwrap();
    store
        .query_range(day(from), day(to))
        .unwrap()
        .map(|m| serde_json::to_value(CloudRecord::from_measurement(&m.unwrap(), channel, threshold)).unwrap())
        .collect()
}

pub fn canonical(mut records: Vec<Value>) -> Vec<String> {
    let mut out: Vec<String> = records.drain(..).map(|v| v.to_string()).collect();
    out.sort();
    out
}

pub fn parse_ndjson(body: &[u8]) -> Vec<Value> {
    body.split(|b| *b == b'\n').filter(|l| !l.is_empty()).map(|l| serde_json::from_slice(l).unwrap()).collect()
}

pub fn gunzip(data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    GzDecoder::new(data).read_to_end(&mut out).unwrap();
    out
}

pub struct Fetched {
    pub status: u16,
    pub encoding: Option<String>,
    pub body: Vec<u8>,
}

pub async fn fetch(url: &str, gzip: bool) -> Fetched {
    let client = reqwest::Client::new();
    let mut req = client.get(url);
    if gzip {
        req = req.header("accept-encoding", "gzip");
    }
    let resp = req.send().await.unwrap();
    let status = resp.status().as_u16();
    let encoding = resp.headers().get("content-encoding").map(|v| v.to_str().unwrap().to_string());
    let body = resp.bytes().await.map(|b| b.to_vec()).unwrap_or_default();
    Fetched { status, encoding, body }
}

pub fn free_ports(n: usize) -> Vec<u16> {
    let listeners: Vec<_> = (0..n).map(|_| std::net::TcpListener::bind("127.0.0.1:0").unwrap()).collect();
    listeners.iter().map(|l| l.local_addr().unwrap().port()).collect()
}

/// A loopback cluster config on free ports.
pub fn cluster_config(data_dir: &Path, frontends: usize, backends: usize) -> scatterd::config::ClusterConfig {
    let ports = free_ports(1 + 2 * frontends + backends);
    let fe: Vec<Value> = (0..frontends)
        .map(|i| serde_json::json!({"host": "127.0.0.1", "port": ports[1 + 2 * i], "httpPort": ports[2 + 2 * i]}))
        .collect();
    let be: Vec<Value> =
        (0..backends).map(|i| serde_json::json!({"host": "127.0.0.1", "port": ports[1 + 2 * frontends + i]})).collect();
    let text = serde_json::json!({
        "schedulerEndpoint": {"host": "127.0.0.1", "port": ports[0]},
        "frontends": fe,
        "backends": be,
        "dataDir": data_dir,
    })
    .to_string();
    scatterd::config::ClusterConfig::from_json(&text, None).unwrap()
}

pub fn write_config(dir: &Path, cfg: &scatterd::config::ClusterConfig) -> std::path::PathBuf {
    let path = dir.join("cluster.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

pub fn sigkill(pid: u32) {
    unsafe { libc::kill(pid as i32, libc::SIGKILL) };
}
