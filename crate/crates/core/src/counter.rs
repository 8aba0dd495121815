//! Per-window unique-MAC counters over an RSS threshold grid.
//!
//! Each MAC is reduced to its strongest RSS in the window; counter `i`
//! counts the MACs of a class whose strongest RSS is strictly above
//! threshold `i`, so every counter vector is non-increasing.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::frame::ProbeRecord;
use crate::mac::MacAddress;
use crate::oui::MacClass;

pub const DEFAULT_THRESHOLD_COUNT: usize = 40;
pub const DEFAULT_LOWEST_DBM: f64 = -120.0;
pub const DEFAULT_STEP_DB: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CounterError {
    #[error("threshold grid must be non-empty, finite and strictly increasing")]
    InvalidGrid,
    #[error("unrecognized grid spec {0:?} (expected default, evenly-spaced, step:START:STEP:COUNT or linspace:FIRST:LAST:COUNT)")]
    BadGridSpec(String),
    #[error("frame at {timestamp_us} us lies outside the window [{start_us}, {end_us})")]
    OutOfWindow { timestamp_us: u64, start_us: u64, end_us: u64 },
}

/// Strictly increasing RSS thresholds in dBm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdGrid {
    thresholds: Vec<f64>,
}

impl ThresholdGrid {
    pub fn new(thresholds: Vec<f64>) -> Result<Self, CounterError> {
        let ok = !thresholds.is_empty()
            && thresholds.iter().all(|t| t.is_finite())
            && thresholds.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(Self { thresholds })
        } else {
            Err(CounterError::InvalidGrid)
        }
    }

    /// `count` thresholds `start, start + step, ...`.
    pub fn stepped(start: f64, step: f64, count: usize) -> Result<Self, CounterError> {
        Self::new((0..count).map(|i| start + step * i as f64).collect())
    }

    /// `count` evenly spaced thresholds from `first` to `last` inclusive.
    pub fn linspace(first: f64, last: f64, count: usize) -> Result<Self, CounterError> {
        if count == 1 {
            return Self::new(vec![first]);
        }
        let span = last - first;
        let denom = (count - 1) as f64;
        Self::new((0..count).map(|i| first + span * i as f64 / denom).collect())
    }

    /// 40 thresholds spanning exactly -120 to -44 dBm (about 1.95 dB apart).
    pub fn evenly_spaced() -> Self {
        Self::linspace(DEFAULT_LOWEST_DBM, -44.0, DEFAULT_THRESHOLD_COUNT).expect("valid grid")
    }

    pub fn values(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<f64> {
        self.thresholds.get(index).copied()
    }

    /// Index of the threshold closest to `dbm` (lower index on ties).
    pub fn nearest_index(&self, dbm: f64) -> usize {
        let mut best = 0;
        for (i, t) in self.thresholds.iter().enumerate() {
            if (t - dbm).abs() < (self.thresholds[best] - dbm).abs() {
                best = i;
            }
        }
        best
    }

    /// Number of thresholds strictly below `rss`, i.e. how many counters a
    /// device heard at `rss` increments.
    pub fn count_below(&self, rss: f64) -> usize {
        self.thresholds.partition_point(|&t| t < rss)
    }
}

impl Default for ThresholdGrid {
    /// -120, -118, ..., -42 dBm.
    fn default() -> Self {
        Self::stepped(DEFAULT_LOWEST_DBM, DEFAULT_STEP_DB, DEFAULT_THRESHOLD_COUNT).expect("valid grid")
    }
}

impl TryFrom<Vec<f64>> for ThresholdGrid {
    type Error = CounterError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ThresholdGrid> for Vec<f64> {
    fn from(g: ThresholdGrid) -> Self {
        g.thresholds
    }
}

impl FromStr for ThresholdGrid {
    type Err = CounterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CounterError::BadGridSpec(s.to_string());
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |i: usize| parts[i].parse::<f64>().map_err(|_| bad());
        let count = |i: usize| parts[i].parse::<usize>().map_err(|_| bad());
        match parts.as_slice() {
            ["default"] => Ok(Self::default()),
            ["evenly-spaced"] => Ok(Self::evenly_spaced()),
            ["step", _, _, _] => Self::stepped(num(1)?, num(2)?, count(3)?),
            ["linspace", _, _, _] => Self::linspace(num(1)?, num(2)?, count(3)?),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ThresholdGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (first, last) = (self.thresholds[0], self.thresholds[self.len() - 1]);
        write!(f, "{} thresholds, {first} .. {last} dBm", self.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacObservation {
    pub class: MacClass,
    pub max_rss: i8,
    pub frames: u32,
}

/// Distinct MACs heard in one window, each with its strongest RSS.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowObservations {
    pub window_start_us: u64,
    pub window_end_us: u64,
    per_mac: HashMap<MacAddress, MacObservation>,
    /// Frames without an antenna-signal value.
    pub dropped_frames: u64,
}

impl WindowObservations {
    pub fn new(window_start_us: u64, window_end_us: u64) -> Self {
        Self {
            window_start_us,
            window_end_us,
            per_mac: HashMap::new(),
            dropped_frames: 0,
        }
    }

    pub fn observe(&mut self, record: &ProbeRecord, class: MacClass) -> Result<(), CounterError> {
        let ts = record.timestamp_us;
        if ts < self.window_start_us || ts >= self.window_end_us {
            return Err(CounterError::OutOfWindow {
                timestamp_us: ts,
                start_us: self.window_start_us,
                end_us: self.window_end_us,
            });
        }
        let Some(rss) = record.rss_dbm else {
            self.dropped_frames += 1;
            return Ok(());
        };
        self.per_mac
            .entry(record.source_mac)
            .and_modify(|o| {
                o.max_rss = o.max_rss.max(rss);
                o.frames += 1;
            })
            .or_insert(MacObservation { class, max_rss: rss, frames: 1 });
        Ok(())
    }

    pub fn get(&self, mac: &MacAddress) -> Option<&MacObservation> {
        self.per_mac.get(mac)
    }

    pub fn distinct_macs(&self) -> usize {
        self.per_mac.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MacAddress, &MacObservation)> {
        self.per_mac.iter()
    }

    pub fn duration_s(&self) -> f64 {
        (self.window_end_us - self.window_start_us) as f64 / 1e6
    }
}

/// Cumulative per-threshold counts for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    /// UTC epoch seconds.
    pub window_start: i64,
    pub window_duration_s: f64,
    pub thresholds: Vec<f64>,
    pub n_valid: Vec<u32>,
    pub n_random: Vec<u32>,
}

impl CounterSnapshot {
    pub fn zeros(grid: &ThresholdGrid, window_start: i64, window_duration_s: f64) -> Self {
        Self {
            window_start,
            window_duration_s,
            thresholds: grid.values().to_vec(),
            n_valid: vec![0; grid.len()],
            n_random: vec![0; grid.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    /// Both vectors match the grid length and never increase with the threshold.
    pub fn is_consistent(&self) -> bool {
        let m = self.thresholds.len();
        self.n_valid.len() == m
            && self.n_random.len() == m
            && self.n_valid.windows(2).all(|w| w[0] >= w[1])
            && self.n_random.windows(2).all(|w| w[0] >= w[1])
    }
}

pub fn close_window(obs: &WindowObservations, grid: &ThresholdGrid) -> CounterSnapshot {
    let m = grid.len();
    // Difference arrays: a device heard at r bumps counters [0, count_below(r)).
    let mut valid_edges = vec![0u32; m + 1];
    let mut random_edges = vec![0u32; m + 1];
    for o in obs.per_mac.values() {
        let k = grid.count_below(o.max_rss as f64);
        match o.class {
            MacClass::Valid => valid_edges[k] += 1,
            MacClass::Randomized => random_edges[k] += 1,
        }
    }
    let suffix = |edges: Vec<u32>| {
        let mut out = vec![0u32; m];
        let mut acc = 0;
        for i in (0..m).rev() {
            acc += edges[i + 1];
            out[i] = acc;
        }
        out
    };
    CounterSnapshot {
        window_start: (obs.window_start_us / 1_000_000) as i64,
        window_duration_s: obs.duration_s(),
        thresholds: grid.values().to_vec(),
        n_valid: suffix(valid_edges),
        n_random: suffix(random_edges),
    }
}

/// A threshold grid plus the observations of the window currently open.
#[derive(Debug, Clone)]
pub struct CounterRegister {
    grid: ThresholdGrid,
    obs: WindowObservations,
}

impl CounterRegister {
    pub fn new(grid: ThresholdGrid, window_start_us: u64, window_duration_us: u64) -> Self {
        Self {
            grid,
            obs: WindowObservations::new(window_start_us, window_start_us + window_duration_us),
        }
    }

    pub fn grid(&self) -> &ThresholdGrid {
        &self.grid
    }

    pub fn observations(&self) -> &WindowObservations {
        &self.obs
    }

    pub fn observe(&mut self, record: &ProbeRecord, class: MacClass) -> Result<(), CounterError> {
        self.obs.observe(record, class)
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        close_window(&self.obs, &self.grid)
    }

    /// Empty the register and open the window starting at `window_start_us`
    /// with the same duration and grid.
    pub fn reset(&mut self, window_start_us: u64) {
        let duration = self.obs.window_end_us - self.obs.window_start_us;
        self.obs = WindowObservations::new(window_start_us, window_start_us + duration);
    }
}
