//! Labeled datasets: counter snapshots paired with ground-truth head counts.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::counter::{ThresholdGrid, WindowObservations};
use crate::estimator::TrainingSample;
use crate::frame::ProbeRecord;
use crate::oui::{ClassifyPolicy, OuiRegistry};
use crate::simulator::TruthPoint;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("ground-truth file line {line}: {message}")]
    TruthFormat { line: usize, message: String },
    #[error("ground-truth file does not declare window_duration_s")]
    MissingWindowDuration,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A labeled dataset for one room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub room_id: String,
    pub seats: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_m2: Option<f64>,
    pub samples: Vec<TrainingSample>,
}

/// Ground-truth series: one head count per window start.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSeries {
    pub window_duration_s: u64,
    pub points: Vec<TruthPoint>,
}

/// Plain-text form: a `# window_duration_s=N` header, then `<epoch_s> <count>` lines.
pub fn write_truth<W: Write>(mut w: W, series: &TruthSeries) -> io::Result<()> {
    writeln!(w, "# window_duration_s={}", series.window_duration_s)?;
    for p in &series.points {
        writeln!(w, "{} {}", p.window_start, p.count)?;
    }
    w.flush()
}

pub fn read_truth<R: BufRead>(r: R) -> Result<TruthSeries, DatasetError> {
    let mut duration = None;
    let mut points = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        let bad = |message: &str| DatasetError::TruthFormat { line: i + 1, message: message.to_string() };
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("window_duration_s=") {
                duration = Some(v.trim().parse::<u64>().map_err(|_| bad("bad window_duration_s"))?);
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(ts), Some(count), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected `<epoch_s> <count>`"));
        };
        points.push(TruthPoint {
            window_start: ts.parse().map_err(|_| bad("bad timestamp"))?,
            count: count.parse().map_err(|_| bad("bad count"))?,
        });
    }
    let window_duration_s = duration.filter(|&d| d > 0).ok_or(DatasetError::MissingWindowDuration)?;
    Ok(TruthSeries { window_duration_s, points })
}

/// Build one training sample per ground-truth window from a time-sorted record stream.
pub fn samples_from_records(
    records: &[ProbeRecord],
    truth: &TruthSeries,
    registry: &OuiRegistry,
    policy: ClassifyPolicy,
    grid: &ThresholdGrid,
) -> Vec<TrainingSample> {
    let dur_us = truth.window_duration_s * 1_000_000;
    truth
        .points
        .iter()
        .map(|p| {
            let start_us = p.window_start.max(0) as u64 * 1_000_000;
            let mut obs = WindowObservations::new(start_us, start_us + dur_us);
            let first = records.partition_point(|r| r.timestamp_us < start_us);
            for r in records[first..].iter().take_while(|r| r.timestamp_us < start_us + dur_us) {
                obs.observe(r, registry.classify_with(r.source_mac, policy)).expect("record inside window");
            }
            TrainingSample { snapshot: crate::counter::close_window(&obs, grid), truth: p.count }
        })
        .collect()
}
