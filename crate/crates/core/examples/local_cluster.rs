//! Scheduler, four back-ends and a front-end in one process; one split query
//! over HTTP.

use scatterd::dataset::{generate, GenerationConfig};
use scatterd::local::{LocalCluster, LocalClusterOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let day = |d| chrono::NaiveDate::from_ymd_opt(2024, 1, d).unwrap();
    let mut gen = GenerationConfig::new(7, day(1), day(11));
    gen.docs_per_day = 300;
    generate(&gen, dir.path())?;

    let cluster = LocalCluster::start(LocalClusterOptions::new(dir.path(), 4)).await?;
    let url = format!("{}/api/cloud-index?from=2024-01-01&to=2024-01-11", cluster.base_url());
    let body = reqwest::get(&url).await?.text().await?;
    println!("{} records from {url}", body.lines().count());
    for (i, b) in cluster.backends.iter().enumerate() {
        println!("backend[{i}] {} {:?}", b.addr, b.stats.snapshot());
    }
    println!("{}", serde_json::to_string(&cluster.gateway.stats())?);
    cluster.shutdown();
    Ok(())
}
