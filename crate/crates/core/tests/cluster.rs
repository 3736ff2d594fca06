mod common;

use common::*;
use scatterd::local::{LocalCluster, LocalClusterOptions};

const Q: &str = "/api/cloud-index?from=2024-01-01&to=2024-01-11";

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn split_query_matches_serial_scan() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 7, "2024-01-01", "2024-01-21", 300);
    let oracle = canonical(serial_oracle(dir.path(), "2024-01-01", "2024-01-11", 0, 1.8));
    for n in [1, 3] {
        let cluster = LocalCluster::start(LocalClusterOptions::new(dir.path(), n)).await.unwrap();
        for mode in ["concurrent", "iterative"] {
            let got = fetch(&format!("{}{Q}&mode={mode}", cluster.base_url()), false).await;
            assert_eq!(got.status, 200);
            assert_eq!(canonical(parse_ndjson(&got.body)), oracle, "{n} backends, {mode}");
        }
        assert_eq!(cluster.gateway.stats().split_requests, if n > 1 { 2 } else { 0 });
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn gzip_body_equals_identity_body() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 3, "2024-01-01", "2024-01-11", 200);
    let cluster = LocalCluster::start(LocalClusterOptions::new(dir.path(), 2)).await.unwrap();
    let url = format!("{}{Q}", cluster.base_url());
    let plain = fetch(&url, false).await;
    let gz = fetch(&url, true).await;
    assert_eq!(plain.encoding, None);
    assert_eq!(gz.encoding.as_deref(), Some("gzip"));
    assert_eq!(canonical(parse_ndjson(&gunzip(&gz.body))), canonical(parse_ndjson(&plain.body)));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 3, "2024-01-01", "2024-01-03", 10);
    let cluster = LocalCluster::start(LocalClusterOptions::new(dir.path(), 1)).await.unwrap();
    let base = cluster.base_url();
    assert_eq!(fetch(&format!("{base}/api/nope?from=2024-01-01&to=2024-01-02"), false).await.status, 404);
    assert_eq!(fetch(&format!("{base}/api/cloud-index?from=2024-01-02&to=2024-01-02"), false).await.status, 400);
    assert_eq!(fetch(&format!("{base}/api/cloud-index?from=x&to=2024-01-02"), false).await.status, 400);
    assert_eq!(
        fetch(&format!("{base}/api/cloud-index?from=2024-01-01&to=2024-01-02&channel=9"), false).await.status,
        400
    );
    assert_eq!(fetch(&format!("{base}/healthz"), false).await.status, 200);

    cluster.stop_backend(0);
    let deadline = std::time::Instant::now() + std::time::Duration::from_secs(5);
    loop {
        let s = fetch(&format!("{base}/api/cloud-index?from=2024-01-01&to=2024-01-02"), false).await.status;
        if s == 503 || s == 502 {
            break;
        }
        assert!(std::time::Instant::now() < deadline, "still {s} after backend stopped");
        tokio::time::sleep(std::time::Duration::from_millis(100)).await;
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn grouped_format_groups_by_day() {
    let dir = tempfile::tempdir().unwrap();
    make_dataset(dir.path(), 5, "2024-01-01", "2024-01-06", 50);
    let cluster = LocalCluster::start(LocalClusterOptions::new(dir.path(), 2)).await.unwrap();
    let got =
        fetch(&format!("{}/api/cloud-index?from=2024-01-01&to=2024-01-06&format=grouped", cluster.base_url()), false)
            .await;
    let groups = parse_ndjson(&got.body);
    assert_eq!(groups.len(), 5);
    for g in &groups {
        assert_eq!(g["records"].as_array().unwrap().len(), 50);
    }
}
