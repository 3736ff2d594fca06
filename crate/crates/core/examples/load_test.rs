//! Closed-loop load against a local cluster: samples.csv plus the aggregate.

use scatterd::dataset::{generate, GenerationConfig};
use scatterd::loadgen::{self, LoadProfile};
use scatterd::local::{LocalCluster, LocalClusterOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let day = |d| chrono::NaiveDate::from_ymd_opt(2024, 1, d).unwrap();
    let mut gen = GenerationConfig::new(11, day(1), day(11));
    gen.docs_per_day = 500;
    generate(&gen, dir.path())?;
    let cluster = LocalCluster::start(LocalClusterOptions::new(dir.path(), 2)).await?;

    let url = format!("{}/api/cloud-index?from=2024-01-01&to=2024-01-11", cluster.base_url());
    let mut profile = LoadProfile::new(url, 4, 24);
    profile.warmup = 2;
    profile.cooldown = 2;
    let report = loadgen::run_load(&profile).await?;
    let csv = dir.path().join("samples.csv");
    loadgen::write_samples_csv(&csv, &report.samples)?;

    let a = loadgen::aggregate(&loadgen::read_samples_csv(&csv)?);
    println!("max in flight {}", report.max_in_flight);
    println!(
        "n={} mean={:.1} ms median={:.1} ms p95={:.1} ms throughput={:.2} req/s errors={}",
        a.samples, a.mean_ms, a.median_ms, a.p95_ms, a.throughput_rps, a.error_count
    );
    cluster.shutdown();
    Ok(())
}
