use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{DatasetError, Measurement};

pub const INDEX_FILE: &str = "index.json";

pub fn day_key(day: NaiveDate) -> String {
    day.format("%Y-%m-%d").to_string()
}

pub fn parse_day(s: &str) -> Result<NaiveDate, DatasetError> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| DatasetError::Invalid(format!("bad date {s:?}: {e}")))
}

/// Read-only view of a generated store. Opening reads only the count index.
#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
    index: BTreeMap<NaiveDate, u64>,
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref().to_path_buf();
        let bytes = std::fs::read(dir.join(INDEX_FILE))
            .map_err(|e| DatasetError::IoFailure(format!("{}: {e}", dir.join(INDEX_FILE).display())))?;
        let raw: BTreeMap<String, u64> =
            serde_json::from_slice(&bytes).map_err(|e| DatasetError::Corrupt(format!("{INDEX_FILE}: {e}")))?;
        let index = raw.into_iter().map(|(k, v)| Ok((parse_day(&k)?, v))).collect::<Result<_, DatasetError>>()?;
        Ok(Self { dir, index })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn first_day(&self) -> Option<NaiveDate> {
        self.index.keys().next().copied()
    }

    /// Day after the last indexed day.
    pub fn end_day(&self) -> Option<NaiveDate> {
        self.index.keys().next_back().and_then(|d| d.succ_opt())
    }

    pub fn count(&self, day: NaiveDate) -> u64 {
        self.index.get(&day).copied().unwrap_or(0)
    }

    /// Per-day counts for every day in `[from, to)`; unindexed days count 0.
    pub fn day_counts(&self, from: NaiveDate, to: NaiveDate) -> Vec<(NaiveDate, u64)> {
        from.iter_days().take_while(|d| *d < to).map(|d| (d, self.count(d))).collect()
    }

    pub fn count_between(&self, from: NaiveDate, to: NaiveDate) -> u64 {
        self.index.range(from..to).map(|(_, c)| *c).sum()
    }

    pub fn total(&self) -> u64 {
        self.index.values().sum()
    }

    fn partition_path(&self, day: NaiveDate) -> PathBuf {
        self.dir.join(format!("{}.ndjson", day_key(day)))
    }

    /// Streams all measurements with `from <= day < to`, ordered by day then
    /// time. Every partition in the range must exist.
    pub fn query_range(&self, from: NaiveDate, to: NaiveDate) -> Result<RangeIter, DatasetError> {
        if from >= to {
            return Err(DatasetError::EmptyRange);
        }
        let days: Vec<NaiveDate> = from.iter_days().take_while(|d| *d < to).collect();
        for day in &days {
            if !self.partition_path(*day).is_file() {
                return Err(DatasetError::MissingPartition(day_key(*day)));
            }
        }
        Ok(RangeIter { paths: days.into_iter().rev().map(|d| self.partition_path(d)).collect(), current: None })
    }
}

pub struct RangeIter {
    /// Remaining partitions, last day first so `pop` yields them in order.
    paths: Vec<PathBuf>,
    current: Option<Lines<BufReader<File>>>,
}

impl Iterator for RangeIter {
    type Item = Result<Measurement, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(lines) = self.current.as_mut() {
                match lines.next() {
                    Some(Ok(line)) if line.trim().is_empty() => continue,
                    Some(Ok(line)) => {
                        return Some(serde_json::from_str(&line).map_err(|e| DatasetError::Corrupt(e.to_string())));
                    }
                    Some(Err(e)) => return Some(Err(e.into())),
                    None => self.current = None,
                }
            }
            let path = self.paths.pop()?;
            match File::open(&path) {
                Ok(f) => self.current = Some(BufReader::with_capacity(1 << 18, f).lines()),
                Err(_) => {
                    let day = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    self.paths.clear();
                    return Some(Err(DatasetError::MissingPartition(day)));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, GenerationConfig};

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn store(docs_per_day: u32) -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let cfg = GenerationConfig { docs_per_day, ..GenerationConfig::new(3, d("2012-03-01"), d("2012-03-06")) };
        generate(&cfg, dir.path()).unwrap();
        let s = Store::open(dir.path()).unwrap();
        (dir, s)
    }

    #[test]
    fn full_range_matches_index() {
        let (_dir, s) = store(40);
        let all: Vec<_> = s.query_range(d("2012-03-01"), d("2012-03-06")).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(all.len() as u64, s.total());
        assert_eq!(s.total(), 200);
        let keys: Vec<_> = all.iter().map(|m| (m.time.date_naive(), m.time)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn single_day() {
        let (_dir, s) = store(40);
        assert_eq!(s.query_range(d("2012-03-02"), d("2012-03-03")).unwrap().count(), 40);
        assert_eq!(s.first_day(), Some(d("2012-03-01")));
        assert_eq!(s.end_day(), Some(d("2012-03-06")));
    }

    #[test]
    fn empty_and_missing() {
        let (_dir, s) = store(5);
        assert!(matches!(s.query_range(d("2012-03-04"), d("2012-03-02")), Err(DatasetError::EmptyRange)));
        assert!(matches!(s.query_range(d("2012-03-04"), d("2012-03-04")), Err(DatasetError::EmptyRange)));
        assert!(matches!(
            s.query_range(d("2012-03-04"), d("2012-03-08")),
            Err(DatasetError::MissingPartition(day)) if day == "2012-03-06"
        ));
    }

    #[test]
    fn counts_from_index() {
        let (_dir, s) = store(7);
        assert_eq!(s.count_between(d("2012-03-02"), d("2012-03-04")), 14);
        assert_eq!(s.day_counts(d("2012-02-28"), d("2012-03-02")).iter().map(|(_, c)| c).sum::<u64>(), 7);
    }
}
