//! Synthetic probe-request traces with known head counts.
//!
//! People stand at static positions for each schedule interval: occupants
//! inside the room boundary, outsiders beyond it. Each person carries 0-2
//! devices; every device emits bursts of probe requests at exponentially
//! distributed intervals, received at a log-distance RSS with Gaussian
//! shadowing. Randomizing devices use a fresh locally-administered MAC per
//! burst whose OUI is not in the vendor pool.

// `!(x > y)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::frame::{ProbeRecord, MIN_RSS_DBM};
use crate::mac::{MacAddress, Oui};

pub const BURST_FRAMES: usize = 3;
const BURST_FRAME_SPACING_US: u64 = 20_000;
const MIN_DISTANCE_M: f64 = 0.1;
const MAX_PLACEMENT_TRIES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("the OUI pool is empty but the profile produces non-randomizing devices")]
    EmptyOuiPool,
    #[error("could not place a person {0} the boundary")]
    Placement(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Boundary {
    Circle { center: Point, radius_m: f64 },
    Polygon { vertices: Vec<Point> },
}

impl Boundary {
    pub fn contains(&self, p: &Point) -> bool {
        match self {
            Boundary::Circle { center, radius_m } => center.distance(p) <= *radius_m,
            Boundary::Polygon { vertices } => {
                // even-odd ray casting
                let mut inside = false;
                let n = vertices.len();
                for i in 0..n {
                    let (a, b) = (vertices[i], vertices[(i + n - 1) % n]);
                    if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }

    fn bounding_box(&self) -> (Point, Point) {
        match self {
            Boundary::Circle { center, radius_m } => (
                Point { x: center.x - radius_m, y: center.y - radius_m },
                Point { x: center.x + radius_m, y: center.y + radius_m },
            ),
            Boundary::Polygon { vertices } => {
                let fold = |f: fn(f64, f64) -> f64, init: f64, get: fn(&Point) -> f64| {
                    vertices.iter().map(get).fold(init, f)
                };
                (
                    Point { x: fold(f64::min, f64::INFINITY, |p| p.x), y: fold(f64::min, f64::INFINITY, |p| p.y) },
                    Point {
                        x: fold(f64::max, f64::NEG_INFINITY, |p| p.x),
                        y: fold(f64::max, f64::NEG_INFINITY, |p| p.y),
                    },
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub room_id: String,
    pub area_m2: f64,
    pub seats: u32,
    pub sniffer_position: Point,
    pub boundary: Boundary,
    /// Outsiders are placed at least this far from the sniffer (and outside the boundary).
    #[serde(default)]
    pub outsider_min_distance_m: f64,
    /// ... and at most this far.
    pub outsider_max_distance_m: f64,
}

impl RoomSpec {
    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_string()));
        if self.seats == 0 {
            return bad("seats must be positive");
        }
        if !(self.area_m2 > 0.0) {
            return bad("area must be positive");
        }
        if let Boundary::Polygon { vertices } = &self.boundary {
            if vertices.len() < 3 {
                return bad("polygon boundary needs at least 3 vertices");
            }
        }
        if !self.boundary.contains(&self.sniffer_position) {
            return bad("sniffer must lie inside the boundary");
        }
        if !(self.outsider_max_distance_m > self.outsider_min_distance_m) {
            return bad("outsider_max_distance_m must exceed outsider_min_distance_m");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonProfile {
    /// Probability of carrying 0, 1 and 2 devices.
    pub device_count_distribution: [f64; 3],
    /// Probability that a device randomizes its MAC (fresh address every burst).
    pub randomization_probability: f64,
    /// Mean seconds between probe bursts of one device.
    pub burst_period_s: f64,
    /// Per-device transmit offset in dB, added to the path-loss reference.
    #[serde(default)]
    pub tx_power_dbm: f64,
}

impl PersonProfile {
    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenario(m.to_string()));
        let d = &self.device_count_distribution;
        if d.iter().any(|p| !(0.0..=1.0).contains(p)) || (d.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("device_count_distribution must be probabilities summing to 1");
        }
        if !(0.0..=1.0).contains(&self.randomization_probability) {
            return bad("randomization_probability must lie in [0, 1]");
        }
        if !(self.burst_period_s > 0.0) {
            return bad("burst_period_s must be positive");
        }
        Ok(())
    }

    fn draw_device_count(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let d = &self.device_count_distribution;
        if u < d[0] {
            0
        } else if u < d[0] + d[1] {
            1
        } else {
            2
        }
    }
}

/// Log-distance path loss with Gaussian shadowing, reference distance 1 m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    pub p0_dbm: f64,
    pub exponent_n: f64,
    pub shadowing_sigma_db: f64,
}

impl PathLossModel {
    fn validate(&self) -> Result<(), SimError> {
        if !(self.exponent_n > 0.0) || !(self.shadowing_sigma_db >= 0.0) {
            return Err(SimError::InvalidScenario(
                "path-loss exponent must be positive and sigma non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// RSS in dBm at `distance_m` (clamped to at least 0.1 m) for a standard-normal `noise_draw`.
pub fn rss_at(model: &PathLossModel, distance_m: f64, noise_draw: f64) -> f64 {
    let d = distance_m.max(MIN_DISTANCE_M);
    model.p0_dbm - 10.0 * model.exponent_n * d.log10() + noise_draw * model.shadowing_sigma_db
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleInterval {
    /// Seconds from the scenario start, inclusive.
    pub start_s: u64,
    /// Exclusive.
    pub end_s: u64,
    pub occupants: u32,
    pub outsiders: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OccupancySchedule {
    pub intervals: Vec<ScheduleInterval>,
}

impl OccupancySchedule {
    pub fn validate(&self) -> Result<(), SimError> {
        for (i, iv) in self.intervals.iter().enumerate() {
            if iv.start_s >= iv.end_s {
                return Err(SimError::InvalidSchedule(format!("interval {i} is empty or reversed")));
            }
        }
        for (i, w) in self.intervals.windows(2).enumerate() {
            if w[1].start_s < w[0].end_s {
                return Err(SimError::InvalidSchedule(format!(
                    "interval {} overlaps or precedes interval {i}",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Occupants present at `t_s` seconds after the start; zero in gaps.
    pub fn occupants_at(&self, t_s: u64) -> u32 {
        self.intervals
            .iter()
            .find(|iv| iv.start_s <= t_s && t_s < iv.end_s)
            .map_or(0, |iv| iv.occupants)
    }

    pub fn span(&self) -> Option<(u64, u64)> {
        Some((self.intervals.first()?.start_s, self.intervals.last()?.end_s))
    }

    /// One interval per window with the given counts.
    pub fn per_window(window_duration_s: u64, counts: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let intervals = counts
            .into_iter()
            .enumerate()
            .map(|(i, (occupants, outsiders))| ScheduleInterval {
                start_s: i as u64 * window_duration_s,
                end_s: (i as u64 + 1) * window_duration_s,
                occupants,
                outsiders,
            })
            .collect();
        Self { intervals }
    }
}

fn default_window() -> u64 {
    300
}

fn default_start() -> i64 {
    1_700_000_000
}

/// Everything needed to generate one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub room: RoomSpec,
    pub profile: PersonProfile,
    pub pathloss: PathLossModel,
    pub schedule: OccupancySchedule,
    pub seed: u64,
    #[serde(default = "default_window")]
    pub window_duration_s: u64,
    /// UTC epoch seconds of schedule time zero.
    #[serde(default = "default_start")]
    pub start_epoch_s: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthPoint {
    /// UTC epoch seconds.
    pub window_start: i64,
    pub count: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Sorted by timestamp.
    pub records: Vec<ProbeRecord>,
    /// Occupants (people, not devices) at each window start.
    pub truth: Vec<TruthPoint>,
    pub window_duration_s: u64,
}

struct Device {
    position: Point,
    /// `None` for randomizing devices.
    mac: Option<MacAddress>,
}

fn place_inside(room: &RoomSpec, rng: &mut impl Rng) -> Result<Point, SimError> {
    let (lo, hi) = room.boundary.bounding_box();
    for _ in 0..MAX_PLACEMENT_TRIES {
        let p = Point { x: rng.random_range(lo.x..=hi.x), y: rng.random_range(lo.y..=hi.y) };
        if room.boundary.contains(&p) {
            return Ok(p);
        }
    }
    Err(SimError::Placement("inside"))
}

fn place_outside(room: &RoomSpec, rng: &mut impl Rng) -> Result<Point, SimError> {
    let (r_min, r_max) = (room.outsider_min_distance_m, room.outsider_max_distance_m);
    for _ in 0..MAX_PLACEMENT_TRIES {
        // uniform over the annulus area
        let u: f64 = rng.random();
        let r = (u * (r_max * r_max - r_min * r_min) + r_min * r_min).sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let p = Point {
            x: room.sniffer_position.x + r * phi.cos(),
            y: room.sniffer_position.y + r * phi.sin(),
        };
        if !room.boundary.contains(&p) {
            return Ok(p);
        }
    }
    Err(SimError::Placement("outside"))
}

fn random_valid_mac(pool: &[Oui], rng: &mut impl Rng) -> MacAddress {
    let oui = pool[rng.random_range(0..pool.len())];
    let tail: [u8; 3] = rng.random();
    MacAddress::new([oui.0[0], oui.0[1], oui.0[2], tail[0], tail[1], tail[2]])
}

fn random_local_mac(pool: &HashSet<Oui>, rng: &mut impl Rng) -> MacAddress {
    loop {
        let mut octets: [u8; 6] = rng.random();
        octets[0] = (octets[0] | 0x02) & !0x01;
        let mac = MacAddress::new(octets);
        if !pool.contains(&mac.oui()) {
            return mac;
        }
    }
}

fn quantize_rss(rss: f64) -> i8 {
    rss.round().clamp(MIN_RSS_DBM as f64, 0.0) as i8
}

pub fn generate_trace(scenario: &Scenario, oui_pool: &[Oui]) -> Result<Trace, SimError> {
    let Scenario { room, profile, pathloss, schedule, seed, window_duration_s, start_epoch_s } = scenario;
    room.validate()?;
    profile.validate()?;
    pathloss.validate()?;
    schedule.validate()?;
    if *window_duration_s == 0 {
        return Err(SimError::InvalidScenario("window_duration_s must be positive".into()));
    }
    let anyone = schedule.intervals.iter().any(|iv| iv.occupants + iv.outsiders > 0);
    if oui_pool.is_empty() && anyone && profile.randomization_probability < 1.0 {
        return Err(SimError::EmptyOuiPool);
    }
    let pool_set: HashSet<Oui> = oui_pool.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(*seed);
    let burst_gap = Exp::new(1.0 / profile.burst_period_s).expect("positive rate");
    let epoch_us = (*start_epoch_s as u64) * 1_000_000;

    let mut records = Vec::new();
    for iv in &schedule.intervals {
        let mut devices = Vec::new();
        for k in 0..iv.occupants + iv.outsiders {
            let position = if k < iv.occupants { place_inside(room, &mut rng)? } else { place_outside(room, &mut rng)? };
            for _ in 0..profile.draw_device_count(&mut rng) {
                let randomizing = rng.random::<f64>() < profile.randomization_probability;
                let mac = (!randomizing).then(|| random_valid_mac(oui_pool, &mut rng));
                devices.push(Device { position, mac });
            }
        }

        let (start_us, end_us) = (iv.start_s * 1_000_000, iv.end_s * 1_000_000);
        for dev in &devices {
            let distance = dev.position.distance(&room.sniffer_position);
            let mut t = start_us as f64 + burst_gap.sample(&mut rng) * 1e6;
            while t < end_us as f64 {
                let mac = dev.mac.unwrap_or_else(|| random_local_mac(&pool_set, &mut rng));
                let burst_start = t as u64;
                for f in 0..BURST_FRAMES as u64 {
                    let ts = burst_start + f * BURST_FRAME_SPACING_US;
                    if ts >= end_us {
                        break;
                    }
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    let rss = rss_at(pathloss, distance, noise) + profile.tx_power_dbm;
                    records.push(ProbeRecord {
                        source_mac: mac,
                        rss_dbm: Some(quantize_rss(rss)),
                        timestamp_us: epoch_us + ts,
                        ssid: Some(Vec::new()),
                    });
                }
                t += burst_gap.sample(&mut rng) * 1e6;
            }
        }
    }
    records.sort_by_key(|r| r.timestamp_us);

    let truth = match schedule.span() {
        None => Vec::new(),
        Some((first, last)) => (first..last)
            .step_by(*window_duration_s as usize)
            .map(|t| TruthPoint {
                window_start: start_epoch_s + t as i64,
                count: schedule.occupants_at(t),
            })
            .collect(),
    };

    Ok(Trace { records, truth, window_duration_s: *window_duration_s })
}
