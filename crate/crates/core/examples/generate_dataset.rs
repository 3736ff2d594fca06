//! Writes a small synthetic lidar dataset and reads a day range back.
//!
//! `cargo run --example generate_dataset -- /tmp/lidar`

use chrono::NaiveDate;
use scatterd::dataset::{generate, CloudRecord, GenerationConfig, Store, DEFAULT_THRESHOLD};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("scatterd-lidar"));
    let from = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
    let mut cfg = GenerationConfig::new(42, from, NaiveDate::from_ymd_opt(2024, 1, 8).unwrap());
    cfg.docs_per_day = 500;
    let counts = generate(&cfg, &dir)?;
    println!("wrote {} days to {}", counts.len(), dir.display());

    let store = Store::open(&dir)?;
    println!("total {} documents, {} on {from}", store.total(), store.count(from));
    for m in store.query_range(from, from.succ_opt().unwrap())?.take(3) {
        let rec = CloudRecord::from_measurement(&m?, 0, DEFAULT_THRESHOLD);
        println!("{}", serde_json::to_string(&rec)?);
    }
    Ok(())
}
