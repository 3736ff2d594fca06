//! The same query fetched with and without `Accept-Encoding: gzip`; the
//! decompressed body matches the identity body byte for byte. One back-end
//! keeps record order fixed between the two requests.

use std::io::Read;

use scatterd::dataset::{generate, GenerationConfig};
use scatterd::local::{LocalCluster, LocalClusterOptions};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let day = |d| chrono::NaiveDate::from_ymd_opt(2024, 1, d).unwrap();
    let mut gen = GenerationConfig::new(3, day(1), day(6));
    gen.docs_per_day = 400;
    generate(&gen, dir.path())?;
    let cluster = LocalCluster::start(LocalClusterOptions::new(dir.path(), 1)).await?;
    let url = format!("{}/api/cloud-index?from=2024-01-01&to=2024-01-06", cluster.base_url());

    let client = reqwest::Client::new();
    let plain = client.get(&url).send().await?.bytes().await?;
    let resp = client.get(&url).header("accept-encoding", "gzip").send().await?;
    println!("content-encoding: {:?}", resp.headers().get("content-encoding"));
    let packed = resp.bytes().await?;
    let mut unpacked = Vec::new();
    flate2::read::GzDecoder::new(&packed[..]).read_to_end(&mut unpacked)?;
    println!(
        "identity {} bytes, gzip {} bytes ({:.1}x)",
        plain.len(),
        packed.len(),
        plain.len() as f64 / packed.len() as f64
    );
    println!("identical after decompression: {}", unpacked == plain);
    cluster.shutdown();
    Ok(())
}
