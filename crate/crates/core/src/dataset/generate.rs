use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::store::{day_key, INDEX_FILE};
use super::{DatasetError, Measurement, CHANNELS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GenerationConfig {
    pub seed: u64,
    pub start_date: NaiveDate,
    /// Exclusive.
    pub end_date: NaiveDate,
    pub docs_per_day: u32,
    pub levels: usize,
}

impl GenerationConfig {
    pub fn new(seed: u64, start_date: NaiveDate, end_date: NaiveDate) -> Self {
        Self { seed, start_date, end_date, docs_per_day: 2_000, levels: 31 }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.docs_per_day == 0 {
            return Err(DatasetError::Invalid("docsPerDay must be at least 1".into()));
        }
        if self.end_date <= self.start_date {
            return Err(DatasetError::EmptyRange);
        }
        if self.levels == 0 {
            return Err(DatasetError::Invalid("levels must be at least 1".into()));
        }
        Ok(())
    }

    /// 6 km upwards in 2 km steps; 31 levels reach 66 km.
    pub fn altitudes(&self) -> Vec<f64> {
        (0..self.levels).map(|i| 6.0 + 2.0 * i as f64).collect()
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.start_date.iter_days().take_while(move |d| *d < self.end_date)
    }
}

fn day_seed(seed: u64, day: NaiveDate) -> u64 {
    let ordinal = day.num_days_from_ce() as u64;
    seed ^ ordinal.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17)
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Measurements for one day, ordered by time. Depends only on `(seed, day)`
/// and the level/doc settings.
pub fn generate_day(config: &GenerationConfig, day: NaiveDate) -> Vec<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(day_seed(config.seed, day));
    let altitudes = config.altitudes();
    let levels = altitudes.len();
    let noise = Normal::new(0.0, 0.6).expect("valid normal");

    let mut seconds: Vec<u32> = (0..config.docs_per_day).map(|_| rng.gen_range(0..86_400)).collect();
    seconds.sort_unstable();
    let midnight = Utc.from_utc_datetime(&day.and_hms_opt(0, 0, 0).expect("midnight exists"));
    let key = day_key(day);

    seconds
        .into_iter()
        .enumerate()
        .map(|(i, sec)| {
            let lat = round3(rng.gen_range(-90.0..=90.0));
            let lon = round3(rng.gen_range(-180.0..=180.0));
            // highest cloudy level; negative means a clear profile
            let cloud_top: i64 = rng.gen_range(-4..levels as i64);
            let cloud_index = (0..CHANNELS)
                .map(|ch| {
                    (0..levels)
                        .map(|lvl| {
                            let mean = if (lvl as i64) <= cloud_top {
                                1.0 + 0.1 * ch as f64
                            } else {
                                3.0 + 6.0 * lvl as f64 / levels as f64 + 0.2 * ch as f64
                            };
                            round3((mean + noise.sample(&mut rng)).clamp(0.0, 10.0))
                        })
                        .collect()
                })
                .collect();
            Measurement {
                id: format!("{key}-{i:05}"),
                time: midnight + chrono::Duration::seconds(sec as i64),
                lat,
                lon,
                altitudes_km: altitudes.clone(),
                cloud_index,
            }
        })
        .collect()
}

/// Writes one `<day>.ndjson` per day plus the count index into `dir`.
pub fn generate(config: &GenerationConfig, dir: &Path) -> Result<BTreeMap<String, u64>, DatasetError> {
    config.validate()?;
    fs::create_dir_all(dir)?;
    let mut index = BTreeMap::new();
    for day in config.days() {
        let key = day_key(day);
        let docs = generate_day(config, day);
        let file = fs::File::create(dir.join(format!("{key}.ndjson")))?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        for m in &docs {
            serde_json::to_writer(&mut out, m).map_err(|e| DatasetError::IoFailure(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        index.insert(key, docs.len() as u64);
    }
    // merge with an existing index so stores can be extended range by range
    let index_path = dir.join(INDEX_FILE);
    let mut merged: BTreeMap<String, u64> = match fs::read(&index_path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| DatasetError::Corrupt(e.to_string()))?,
        Err(_) => BTreeMap::new(),
    };
    merged.extend(index.iter().map(|(k, v)| (k.clone(), *v)));
    let mut text = serde_json::to_string_pretty(&merged).map_err(|e| DatasetError::IoFailure(e.to_string()))?;
    text.push('\n');
    fs::write(index_path, text)?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn small(seed: u64) -> GenerationConfig {
        GenerationConfig { docs_per_day: 50, ..GenerationConfig::new(seed, d("2012-01-01"), d("2012-01-04")) }
    }

    #[test]
    fn altitude_grid() {
        let a = GenerationConfig::new(1, d("2012-01-01"), d("2012-01-02")).altitudes();
        assert_eq!(a.len(), 31);
        assert_eq!(a[0], 6.0);
        assert_eq!(a[30], 66.0);
    }

    #[test]
    fn documents_are_valid_and_time_ordered() {
        let cfg = small(7);
        let docs = generate_day(&cfg, d("2012-01-02"));
        assert_eq!(docs.len(), 50);
        for m in &docs {
            m.validate().unwrap();
            assert_eq!(m.time.date_naive(), d("2012-01-02"));
            assert!(m.cloud_index.iter().flatten().all(|v| (0.0..=10.0).contains(v)));
        }
        assert!(docs.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn day_streams_are_independent_of_range() {
        let a = small(7);
        let b = GenerationConfig { start_date: d("2011-12-01"), ..small(7) };
        assert_eq!(generate_day(&a, d("2012-01-03")), generate_day(&b, d("2012-01-03")));
        assert_ne!(generate_day(&a, d("2012-01-03")), generate_day(&small(8), d("2012-01-03")));
    }

    #[test]
    fn byte_identical_regeneration() {
        let cfg = small(42);
        let one = tempfile::tempdir().unwrap();
        let two = tempfile::tempdir().unwrap();
        generate(&cfg, one.path()).unwrap();
        generate(&cfg, two.path()).unwrap();
        let mut names: Vec<_> = fs::read_dir(one.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 4);
        for name in names {
            assert_eq!(fs::read(one.path().join(&name)).unwrap(), fs::read(two.path().join(&name)).unwrap());
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small(1);
        cfg.docs_per_day = 0;
        assert!(cfg.validate().is_err());
        let cfg = GenerationConfig::new(1, d("2012-01-02"), d("2012-01-02"));
        assert_eq!(cfg.validate(), Err(DatasetError::EmptyRange));
    }
}
