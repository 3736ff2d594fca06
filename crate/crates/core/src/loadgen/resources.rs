use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use tokio_util::sync::CancellationToken;

use super::{check_header, LoadError};

pub const RESOURCES_HEADER: [&str; 5] = ["timestampMs", "role", "pid", "cpuPct", "memPct"];
const VANISHED: &str = "vanished:";

/// CPU is normalized per core (100 = one core busy), as `top` reports it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResourceSample {
    pub timestamp_ms: u64,
    pub role: String,
    pub pid: u32,
    pub cpu_pct: Option<f64>,
    pub mem_pct: Option<f64>,
}

impl ResourceSample {
    /// Footer rows record a process that disappeared mid-run.
    pub fn vanished_role(&self) -> Option<&str> {
        self.role.strip_prefix(VANISHED)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ResourceLog {
    pub rows: Vec<ResourceSample>,
    pub vanished: Vec<(String, u32)>,
}

impl ResourceLog {
    /// Data rows followed by one footer row per vanished process.
    pub fn csv_rows(&self) -> Vec<ResourceSample> {
        let end = self.rows.last().map_or(0, |r| r.timestamp_ms);
        let footer = self.vanished.iter().map(|(role, pid)| ResourceSample {
            timestamp_ms: end,
            role: format!("{VANISHED}{role}"),
            pid: *pid,
            cpu_pct: None,
            mem_pct: None,
        });
        self.rows.iter().cloned().chain(footer).collect()
    }
}

/// Cumulative CPU ticks and resident pages of one process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProcStat {
    pub cpu_ticks: u64,
    pub rss_pages: u64,
}

impl ProcStat {
    pub fn read(pid: u32) -> Option<Self> {
        let text = std::fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
        Self::parse(&text)
    }

    /// Parses `/proc/<pid>/stat`; the command name may contain spaces.
    pub fn parse(text: &str) -> Option<Self> {
        let rest = &text[text.rfind(')')? + 1..];
        let fields: Vec<&str> = rest.split_whitespace().collect();
        // fields[0] is the state (field 3); utime/stime are fields 14/15, rss is 24
        let utime: u64 = fields.get(11)?.parse().ok()?;
        let stime: u64 = fields.get(12)?.parse().ok()?;
        let rss: u64 = fields.get(21)?.parse().ok()?;
        if fields[0] == "Z" || fields[0] == "X" {
            return None;
        }
        Some(Self { cpu_ticks: utime + stime, rss_pages: rss })
    }
}

fn mem_total_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = text.lines().find(|l| l.starts_with("MemTotal:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn sysconf(name: libc::c_int) -> u64 {
    // SAFETY: sysconf has no preconditions.
    let v = unsafe { libc::sysconf(name) };
    if v > 0 {
        v as u64
    } else {
        0
    }
}

fn epoch_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Samples every target each `interval` until `duration` has passed: one row
/// per (tick, live pid), the first tick one interval after the start.
pub async fn sample_resources(targets: &[(String, u32)], interval: Duration, duration: Duration) -> ResourceLog {
    let ticks = (duration.as_millis() / interval.as_millis().max(1)) as usize;
    sample_until(targets, interval, Some(ticks), CancellationToken::new()).await
}

/// Like [`sample_resources`], but runs until `stop` is cancelled.
pub async fn sample_resources_until(
    targets: &[(String, u32)],
    interval: Duration,
    stop: CancellationToken,
) -> ResourceLog {
    sample_until(targets, interval, None, stop).await
}

async fn sample_until(
    targets: &[(String, u32)],
    interval: Duration,
    max_ticks: Option<usize>,
    stop: CancellationToken,
) -> ResourceLog {
    let ticks_per_sec = sysconf(libc::_SC_CLK_TCK).max(1) as f64;
    let page = sysconf(libc::_SC_PAGESIZE).max(1) as f64;
    let mem_total = mem_total_bytes().unwrap_or(1) as f64;
    let mut log = ResourceLog::default();
    let mut live: Vec<(String, u32, Option<ProcStat>)> =
        targets.iter().map(|(role, pid)| (role.clone(), *pid, ProcStat::read(*pid))).collect();
    for (role, pid, stat) in &live {
        if stat.is_none() {
            log.vanished.push((role.clone(), *pid));
        }
    }
    live.retain(|t| t.2.is_some());
    let mut last = Instant::now();
    let mut tick = tokio::time::interval_at(tokio::time::Instant::now() + interval, interval);
    let mut n = 0;
    while max_ticks.map_or(true, |m| n < m) {
        tokio::select! {
            _ = tick.tick() => {}
            _ = stop.cancelled() => break,
        }
        n += 1;
        let now = Instant::now();
        let wall = (now - last).as_secs_f64();
        last = now;
        let ts = epoch_ms();
        live.retain_mut(|(role, pid, prev)| match ProcStat::read(*pid) {
            Some(cur) => {
                let dt = cur.cpu_ticks.saturating_sub(prev.map_or(0, |p| p.cpu_ticks)) as f64 / ticks_per_sec;
                log.rows.push(ResourceSample {
                    timestamp_ms: ts,
                    role: role.clone(),
                    pid: *pid,
                    cpu_pct: Some(round2(100.0 * dt / wall)),
                    mem_pct: Some(round2(100.0 * cur.rss_pages as f64 * page / mem_total)),
                });
                *prev = Some(cur);
                true
            }
            None => {
                log.vanished.push((role.clone(), *pid));
                false
            }
        });
    }
    log
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn write_resources_csv(path: &Path, log: &ResourceLog) -> Result<(), LoadError> {
    let mut w = csv::Writer::from_path(path)?;
    let rows = log.csv_rows();
    if rows.is_empty() {
        w.write_record(RESOURCES_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_resources_csv(path: &Path) -> Result<ResourceLog, LoadError> {
    let mut rdr = csv::Reader::from_path(path)?;
    check_header(path, &mut rdr, &RESOURCES_HEADER)?;
    let mut log = ResourceLog::default();
    for row in rdr.deserialize::<ResourceSample>() {
        let row = row?;
        match row.vanished_role() {
            Some(role) => log.vanished.push((role.to_string(), row.pid)),
            None => log.rows.push(row),
        }
    }
    Ok(log)
}

/// Mean cpuPct per role label.
pub fn mean_cpu_by_role(rows: &[ResourceSample]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in rows {
        if let Some(c) = r.cpu_pct {
            let e = acc.entry(r.role.clone()).or_default();
            e.0 += c;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_stat_with_spaces_in_name() {
        let line = "1234 (my proc) S 1 1234 1234 0 -1 4194560 100 0 0 0 250 50 0 0 20 0 4 0 100 12345678 777 1844 0";
        assert_eq!(ProcStat::parse(line), Some(ProcStat { cpu_ticks: 300, rss_pages: 777 }));
    }

    #[tokio::test]
    async fn one_row_per_tick() {
        let me = vec![("self".to_string(), std::process::id())];
        let log = sample_resources(&me, Duration::from_millis(20), Duration::from_millis(100)).await;
        assert_eq!(log.rows.len(), 5);
        assert!(log.vanished.is_empty());
        assert!(log.rows.iter().all(|r| r.mem_pct.unwrap() > 0.0));
    }

    #[tokio::test]
    async fn vanished_pid_gets_footer() {
        let mut child = std::process::Command::new("sleep").arg("0.3").spawn().unwrap();
        let targets = vec![("self".to_string(), std::process::id()), ("sleeper".to_string(), child.id())];
        let log = sample_resources(&targets, Duration::from_millis(200), Duration::from_millis(1000)).await;
        let _ = child.wait();
        assert_eq!(log.rows.iter().filter(|r| r.role == "self").count(), 5);
        assert!(log.rows.iter().filter(|r| r.role == "sleeper").count() < 5);
        assert_eq!(log.vanished, vec![("sleeper".to_string(), child.id())]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resources.csv");
        write_resources_csv(&path, &log).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("timestampMs,role,pid,cpuPct,memPct\n"));
        assert!(text.lines().last().unwrap().contains("vanished:sleeper"));
        let back = read_resources_csv(&path).unwrap();
        assert_eq!(back.rows, log.rows);
        assert_eq!(back.vanished, log.vanished);
    }
}
