//! Append-only event log: one line-delimited JSON file per UTC day.

use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::message::{EnvironmentPayload, EstimatePayload, GroundTruthMsg};

/// One point of a room's parameter history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsPoint {
    pub room: String,
    /// Retrain time, or the first report's window start for the initial parameters.
    pub ts: i64,
    pub alpha: f64,
    pub beta: f64,
    pub theta_dbm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trained_at: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Event {
    Estimate(EstimatePayload),
    Groundtruth(GroundTruthMsg),
    Environment(EnvironmentPayload),
    ParamsUpdate(ParamsPoint),
}

impl Event {
    pub fn room(&self) -> &str {
        match self {
            Event::Estimate(p) => &p.room,
            Event::Groundtruth(m) => &m.room,
            Event::Environment(p) => &p.room,
            Event::ParamsUpdate(p) => &p.room,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    /// Server time of ingestion, UTC epoch seconds.
    pub ts: i64,
    pub event: Event,
}

#[derive(Debug)]
pub struct EventLog {
    dir: PathBuf,
    next_seq: u64,
}

const PREFIX: &str = "events-";
const SUFFIX: &str = ".jsonl";

pub fn file_name_for(ts: i64) -> String {
    let day = chrono::DateTime::from_timestamp(ts, 0).unwrap_or_default().date_naive();
    format!("{PREFIX}{}{SUFFIX}", day.format("%Y-%m-%d"))
}

impl EventLog {
    /// Open (creating if needed) a log directory and return every readable entry in `seq` order.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<(Self, Vec<LogEntry>)> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with(PREFIX) && n.ends_with(SUFFIX))
            })
            .collect();
        files.sort();
        let mut entries = Vec::new();
        for path in &files {
            read_file(path, &mut entries)?;
        }
        entries.sort_by_key(|e| e.seq);
        let next_seq = entries.last().map_or(0, |e| e.seq + 1);
        Ok((Self { dir, next_seq }, entries))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&mut self, ts: i64, event: Event) -> io::Result<LogEntry> {
        let entry = LogEntry { seq: self.next_seq, ts, event };
        let mut line = serde_json::to_string(&entry).map_err(io::Error::other)?;
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(file_name_for(ts)))?;
        f.write_all(line.as_bytes())?;
        f.flush()?;
        self.next_seq += 1;
        Ok(entry)
    }
}

fn read_file(path: &Path, out: &mut Vec<LogEntry>) -> io::Result<()> {
    let bytes = fs::read(path)?;
    for (i, line) in BufReader::new(&bytes[..]).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogEntry>(&line) {
            Ok(e) => out.push(e),
            Err(e) => log::warn!("{}:{}: skipping unreadable event: {e}", path.display(), i + 1),
        }
    }
    // Terminate a torn final line so the next append starts cleanly.
    if bytes.last().is_some_and(|&b| b != b'\n') {
        OpenOptions::new().append(true).open(path)?.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_per_day() {
        assert_eq!(file_name_for(0), "events-1970-01-01.jsonl");
        assert_eq!(file_name_for(1_700_000_000), "events-2023-11-14.jsonl");
    }

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let (mut log, entries) = EventLog::open(dir.path()).unwrap();
        assert!(entries.is_empty());
        let gt = |c| Event::Groundtruth(GroundTruthMsg { room: "a".into(), count: c, issued_at: 5, ttl_s: 60 });
        log.append(10, gt(1)).unwrap();
        log.append(90_000, gt(2)).unwrap();
        log.append(20, gt(3)).unwrap();
        let (log2, entries) = EventLog::open(dir.path()).unwrap();
        let counts: Vec<u32> = entries
            .iter()
            .map(|e| match &e.event {
                Event::Groundtruth(m) => m.count,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(counts, vec![1, 2, 3]);
        assert_eq!(log2.next_seq, 3);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 2);
    }

    #[test]
    fn torn_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let (mut log, _) = EventLog::open(dir.path()).unwrap();
        log.append(0, Event::Groundtruth(GroundTruthMsg { room: "a".into(), count: 1, issued_at: 0, ttl_s: 1 }))
            .unwrap();
        let path = dir.path().join(file_name_for(0));
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":1,\"ts\":0,\"ki").unwrap();
        let (mut log, entries) = EventLog::open(dir.path()).unwrap();
        assert_eq!(entries.len(), 1);
        log.append(0, Event::Groundtruth(GroundTruthMsg { room: "a".into(), count: 2, issued_at: 0, ttl_s: 1 }))
            .unwrap();
        assert_eq!(EventLog::open(dir.path()).unwrap().1.len(), 2);
    }

    #[test]
    fn entry_json_shape() {
        let e = LogEntry {
            seq: 7,
            ts: 1,
            event: Event::ParamsUpdate(ParamsPoint {
                room: "a".into(),
                ts: 1,
                alpha: 1.0,
                beta: 0.1,
                theta_dbm: -80.0,
                trained_at: None,
            }),
        };
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["event"]["kind"], "params-update");
        assert_eq!(v["seq"], 7);
        assert_eq!(serde_json::from_value::<LogEntry>(v).unwrap(), e);
    }
}
