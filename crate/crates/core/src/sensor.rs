//! Sensor-node runtime: sniff one window, sync with the backend, retrain on fresh ground truth.

use std::collections::VecDeque;
use std::iter::Peekable;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::counter::{close_window, CounterSnapshot, ThresholdGrid, WindowObservations};
use crate::estimator::{estimate, round_estimate, train, EstimatorError, ModelParams, SearchGrid, TrainingBuffer, TrainingSample};
use crate::frame::ProbeRecord;
use crate::message::{Environment, EnvironmentPayload, EstimatePayload, GroundTruthMsg};
use crate::oui::{ClassifyPolicy, OuiRegistry};

pub const OUTBOX_CAPACITY: usize = 1000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SensorError {
    #[error("ground truth for room {got:?} delivered to sensor for room {expected:?}")]
    WrongRoom { expected: String, got: String },
    #[error("window_duration_s must be positive")]
    InvalidConfig,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LinkError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend rejected the message: {0}")]
    Rejected(String),
}

/// Transport to the backend.
pub trait BackendLink {
    /// Latest retained ground truth for the room, expired or not.
    fn fetch_groundtruth(&mut self, room: &str) -> Result<Option<GroundTruthMsg>, LinkError>;
    fn publish_estimate(&mut self, payload: &EstimatePayload) -> Result<(), LinkError>;
    fn publish_environment(&mut self, payload: &EnvironmentPayload) -> Result<(), LinkError>;
}

/// Source of the current time, in UTC epoch seconds.
pub trait Clock {
    fn now(&self) -> i64;
    /// Block (or jump) until `t`; a no-op when `t` is in the past.
    fn advance_to(&mut self, t: i64);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs() as i64)
    }

    fn advance_to(&mut self, t: i64) {
        let wait = t - self.now();
        if wait > 0 {
            std::thread::sleep(std::time::Duration::from_secs(wait as u64));
        }
    }
}

/// Manually driven clock. Clones share the same time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<AtomicI64>);

impl ManualClock {
    pub fn new(t: i64) -> Self {
        Self(Arc::new(AtomicI64::new(t)))
    }

    pub fn set(&self, t: i64) {
        self.0.store(t, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }

    fn advance_to(&mut self, t: i64) {
        self.0.fetch_max(t, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub room_id: String,
    #[serde(default = "default_window")]
    pub window_duration_s: u64,
    #[serde(default)]
    pub grid: ThresholdGrid,
    /// `host:port` of the backend line-JSON endpoint.
    #[serde(default = "default_backend")]
    pub backend: String,
    #[serde(default)]
    pub publish_environment: bool,
    #[serde(default)]
    pub policy: ClassifyPolicy,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    #[serde(default)]
    pub search: SearchGrid,
    /// Seed for the synthetic environment readings.
    #[serde(default)]
    pub seed: u64,
}

fn default_capacity() -> usize {
    40
}

fn default_window() -> u64 {
    300
}

pub const DEFAULT_BACKEND: &str = "127.0.0.1:1883";

fn default_backend() -> String {
    DEFAULT_BACKEND.to_string()
}

impl SensorConfig {
    pub fn new(room_id: impl Into<String>) -> Self {
        Self {
            room_id: room_id.into(),
            window_duration_s: default_window(),
            grid: ThresholdGrid::default(),
            backend: default_backend(),
            publish_environment: false,
            policy: ClassifyPolicy::default(),
            buffer_capacity: default_capacity(),
            search: SearchGrid::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundTruthOutcome {
    Accepted,
    RejectedExpired,
    RejectedDuplicate,
}

/// Slow random walk around indoor baselines.
#[derive(Debug, Clone)]
pub struct EnvironmentWalk {
    baseline: Environment,
    current: Environment,
    rng: ChaCha8Rng,
}

impl EnvironmentWalk {
    pub fn new(baseline: Environment, seed: u64) -> Self {
        Self { baseline, current: baseline, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn step(&mut self) -> Environment {
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut walk = |cur: f64, base: f64, sd: f64| cur + 0.1 * (base - cur) + sd * unit.sample(&mut self.rng);
        let c = self.current;
        let b = self.baseline;
        self.current = Environment {
            temperature_c: walk(c.temperature_c, b.temperature_c, 0.1),
            humidity_pct: walk(c.humidity_pct, b.humidity_pct, 0.5).clamp(0.0, 100.0),
            pressure_hpa: walk(c.pressure_hpa, b.pressure_hpa, 0.2),
            light_lux: walk(c.light_lux, b.light_lux, 10.0).max(0.0),
        };
        self.current
    }
}

impl Default for EnvironmentWalk {
    fn default() -> Self {
        Self::new(
            Environment { temperature_c: 21.0, humidity_pct: 45.0, pressure_hpa: 1013.0, light_lux: 350.0 },
            0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReport {
    pub room_id: String,
    pub window_start: i64,
    pub estimate_raw: f64,
    pub estimate: u32,
    pub params_used: ModelParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trained_at: Option<i64>,
    pub snapshot: CounterSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<Environment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<u32>,
    #[serde(default)]
    pub partial: bool,
}

impl SensorReport {
    pub fn to_payload(&self) -> EstimatePayload {
        EstimatePayload {
            room: self.room_id.clone(),
            window_start: self.window_start,
            window_duration_s: self.snapshot.window_duration_s,
            estimate_raw: self.estimate_raw,
            estimate: self.estimate,
            alpha: self.params_used.alpha,
            beta: self.params_used.beta,
            theta_dbm: self.params_used.theta_dbm,
            n_valid: self.snapshot.n_valid.clone(),
            n_random: self.snapshot.n_random.clone(),
            thresholds: self.snapshot.thresholds.clone(),
            trained_at: self.trained_at,
            truth: self.truth,
            partial: self.partial,
        }
    }
}

/// What happened in one sniff/sync cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    pub report: SensorReport,
    pub groundtruth: Option<GroundTruthOutcome>,
    pub retrained: bool,
    /// Frames timestamped before the window start (out of order), ignored.
    pub late_frames: u64,
    /// Reports still waiting for delivery after this cycle.
    pub queued: usize,
}

#[derive(Debug, Clone)]
pub struct SensorState {
    pub params: ModelParams,
    pub trained_at: Option<i64>,
    pub buffer: TrainingBuffer,
    last_issued_at: Option<i64>,
    outbox: VecDeque<EstimatePayload>,
    dropped_reports: u64,
    next_window_start: Option<i64>,
    environment: EnvironmentWalk,
}

impl SensorState {
    pub fn new(config: &SensorConfig) -> Self {
        Self {
            params: ModelParams::cold_start(&config.grid),
            trained_at: None,
            buffer: TrainingBuffer::new(config.buffer_capacity),
            last_issued_at: None,
            outbox: VecDeque::new(),
            dropped_reports: 0,
            next_window_start: None,
            environment: EnvironmentWalk::new(EnvironmentWalk::default().baseline, config.seed),
        }
    }

    /// Align the first window to `t` instead of the first frame's timestamp.
    pub fn start_at(&mut self, t: i64) {
        self.next_window_start = Some(t);
    }

    pub fn queued(&self) -> usize {
        self.outbox.len()
    }

    /// Reports discarded because the offline queue was full.
    pub fn dropped_reports(&self) -> u64 {
        self.dropped_reports
    }

    fn enqueue(&mut self, payload: EstimatePayload) {
        if self.outbox.len() == OUTBOX_CAPACITY {
            self.outbox.pop_front();
            self.dropped_reports += 1;
        }
        self.outbox.push_back(payload);
    }

    fn flush(&mut self, link: &mut dyn BackendLink) {
        while let Some(front) = self.outbox.front() {
            match link.publish_estimate(front) {
                Ok(()) => {
                    self.outbox.pop_front();
                }
                Err(LinkError::Rejected(e)) => {
                    log::warn!("backend rejected report for window {}: {e}", front.window_start);
                    self.outbox.pop_front();
                }
                Err(e) => {
                    log::warn!("{e}; {} report(s) queued", self.outbox.len());
                    break;
                }
            }
        }
    }
}

/// TTL gate and at-most-once consumption.
pub fn apply_groundtruth(
    state: &mut SensorState,
    config: &SensorConfig,
    msg: &GroundTruthMsg,
    now: i64,
) -> Result<GroundTruthOutcome, SensorError> {
    if msg.room != config.room_id {
        return Err(SensorError::WrongRoom { expected: config.room_id.clone(), got: msg.room.clone() });
    }
    if msg.is_expired(now) {
        return Ok(GroundTruthOutcome::RejectedExpired);
    }
    if state.last_issued_at.is_some_and(|last| msg.issued_at <= last) {
        return Ok(GroundTruthOutcome::RejectedDuplicate);
    }
    state.last_issued_at = Some(msg.issued_at);
    Ok(GroundTruthOutcome::Accepted)
}

/// One cycle: consume a window of time-sorted frames, then sync with the backend.
///
/// Returns `None` when the frame source is already exhausted.
pub fn run_window<I, C>(
    state: &mut SensorState,
    config: &SensorConfig,
    registry: &OuiRegistry,
    frames: &mut Peekable<I>,
    clock: &mut C,
    link: &mut dyn BackendLink,
) -> Result<Option<WindowOutcome>, SensorError>
where
    I: Iterator<Item = ProbeRecord>,
    C: Clock + ?Sized,
{
    if config.window_duration_s == 0 {
        return Err(SensorError::InvalidConfig);
    }
    let start = match (state.next_window_start, frames.peek()) {
        (Some(s), _) => s,
        (None, Some(first)) => first.timestamp_s(),
        (None, None) => return Ok(None),
    };
    let end = start + config.window_duration_s as i64;
    let start_us = start.max(0) as u64 * 1_000_000;
    let end_us = end.max(0) as u64 * 1_000_000;

    let mut obs = WindowObservations::new(start_us, end_us);
    let mut late_frames = 0;
    let mut exhausted = true;
    while let Some(rec) = frames.peek() {
        if rec.timestamp_us >= end_us {
            exhausted = false;
            break;
        }
        let rec = frames.next().expect("peeked");
        if rec.timestamp_us < start_us {
            late_frames += 1;
            continue;
        }
        obs.observe(&rec, registry.classify_with(rec.source_mac, config.policy)).expect("frame inside window");
    }
    if exhausted && obs.distinct_macs() == 0 && late_frames == 0 && state.next_window_start.is_some() {
        return Ok(None);
    }

    // Sync phase.
    clock.advance_to(end);
    let snapshot = close_window(&obs, &config.grid);
    let mut outcome = None;
    let mut truth = None;
    let mut retrained = false;
    match link.fetch_groundtruth(&config.room_id) {
        Ok(Some(msg)) => {
            let result = apply_groundtruth(state, config, &msg, clock.now())?;
            if result == GroundTruthOutcome::Accepted {
                state.buffer.push(TrainingSample { snapshot: snapshot.clone(), truth: msg.count });
                state.params = train(&state.buffer, &config.search)?.params;
                state.trained_at = Some(clock.now());
                truth = Some(msg.count);
                retrained = true;
            }
            outcome = Some(result);
        }
        Ok(None) => {}
        Err(e) => log::warn!("ground-truth fetch failed: {e}"),
    }

    let raw = estimate(&state.params, &snapshot)?;
    let environment = config.publish_environment.then(|| state.environment.step());
    let report = SensorReport {
        room_id: config.room_id.clone(),
        window_start: start,
        estimate_raw: raw,
        estimate: round_estimate(raw),
        params_used: state.params,
        trained_at: state.trained_at,
        snapshot,
        environment,
        truth,
        partial: exhausted,
    };
    state.enqueue(report.to_payload());
    state.flush(link);
    if let Some(reading) = environment {
        let payload = EnvironmentPayload { room: config.room_id.clone(), reading, ts: Some(end) };
        if let Err(e) = link.publish_environment(&payload) {
            log::warn!("environment publish failed: {e}");
        }
    }
    state.next_window_start = Some(end);
    Ok(Some(WindowOutcome { report, groundtruth: outcome, retrained, late_frames, queued: state.queued() }))
}

/// Run cycles until the frame source is exhausted.
pub fn run_all<I, C>(
    state: &mut SensorState,
    config: &SensorConfig,
    registry: &OuiRegistry,
    frames: I,
    clock: &mut C,
    link: &mut dyn BackendLink,
) -> Result<Vec<WindowOutcome>, SensorError>
where
    I: IntoIterator<Item = ProbeRecord>,
    C: Clock + ?Sized,
{
    let mut frames = frames.into_iter().peekable();
    let mut out = Vec::new();
    while let Some(o) = run_window(state, config, registry, &mut frames, clock, link)? {
        let done = o.report.partial;
        out.push(o);
        if done {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::MacAddress;

    #[derive(Default)]
    struct FakeLink {
        groundtruth: Option<GroundTruthMsg>,
        down: bool,
        published: Vec<EstimatePayload>,
        environment: Vec<EnvironmentPayload>,
    }

    impl BackendLink for FakeLink {
        fn fetch_groundtruth(&mut self, _room: &str) -> Result<Option<GroundTruthMsg>, LinkError> {
            if self.down {
                return Err(LinkError::Unreachable("down".into()));
            }
            Ok(self.groundtruth.clone())
        }

        fn publish_estimate(&mut self, p: &EstimatePayload) -> Result<(), LinkError> {
            if self.down {
                return Err(LinkError::Unreachable("down".into()));
            }
            self.published.push(p.clone());
            Ok(())
        }

        fn publish_environment(&mut self, p: &EnvironmentPayload) -> Result<(), LinkError> {
            self.environment.push(p.clone());
            Ok(())
        }
    }

    fn config() -> SensorConfig {
        SensorConfig { window_duration_s: 60, ..SensorConfig::new("lab") }
    }

    fn frames(window: i64, macs: u8) -> Vec<ProbeRecord> {
        (0..macs)
            .map(|i| ProbeRecord {
                source_mac: MacAddress::new([0x00, 0x00, 0x0c, 0, 0, i]),
                rss_dbm: Some(-50),
                timestamp_us: (window * 60 + 1 + i as i64) as u64 * 1_000_000,
                ssid: None,
            })
            .collect()
    }

    fn gt(count: u32, issued_at: i64) -> GroundTruthMsg {
        GroundTruthMsg { room: "lab".into(), count, issued_at, ttl_s: 600 }
    }

    #[test]
    fn config_defaults() {
        let cfg: SensorConfig = serde_json::from_str(r#"{"room_id":"lab"}"#).unwrap();
        assert_eq!(cfg, SensorConfig::new("lab"));
    }

    #[test]
    fn groundtruth_examples() {
        let cfg = config();
        let mut st = SensorState::new(&cfg);
        let m = GroundTruthMsg { room: "lab".into(), count: 4, issued_at: 100, ttl_s: 60 };
        assert_eq!(apply_groundtruth(&mut st, &cfg, &m, 161), Ok(GroundTruthOutcome::RejectedExpired));
        assert_eq!(apply_groundtruth(&mut st, &cfg, &m, 150), Ok(GroundTruthOutcome::Accepted));
        assert_eq!(apply_groundtruth(&mut st, &cfg, &m, 150), Ok(GroundTruthOutcome::RejectedDuplicate));
        let other = GroundTruthMsg { room: "hall".into(), ..m };
        assert!(matches!(apply_groundtruth(&mut st, &cfg, &other, 150), Err(SensorError::WrongRoom { .. })));
    }

    #[test]
    fn no_groundtruth_keeps_params() {
        let cfg = config();
        let mut st = SensorState::new(&cfg);
        let before = st.params;
        let mut link = FakeLink::default();
        let mut clock = ManualClock::new(0);
        let reg = OuiRegistry::fixture();
        let mut input = frames(0, 3).into_iter().chain(frames(1, 1)).peekable();
        let o = run_window(&mut st, &cfg, &reg, &mut input, &mut clock, &mut link).unwrap().unwrap();
        assert_eq!(st.params, before);
        assert!(!o.retrained && !o.report.partial);
        assert_eq!(o.report.estimate_raw, 3.0);
        assert_eq!(link.published.len(), 1);
        assert_eq!(clock.now(), 61);
    }

    #[test]
    fn fresh_groundtruth_retrains() {
        let cfg = config();
        let mut st = SensorState::new(&cfg);
        let mut link = FakeLink { groundtruth: Some(gt(6, 10)), ..Default::default() };
        let mut clock = ManualClock::new(0);
        let reg = OuiRegistry::fixture();
        let out = run_all(&mut st, &cfg, &reg, frames(0, 3).into_iter().chain(frames(1, 3)), &mut clock, &mut link)
            .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].groundtruth, Some(GroundTruthOutcome::Accepted));
        assert_eq!(out[1].groundtruth, Some(GroundTruthOutcome::RejectedDuplicate));
        assert_eq!(st.buffer.len(), 1);
        assert_eq!(out[0].report.params_used.alpha, 2.0);
        assert_eq!(out[0].report.estimate_raw, 6.0);
        assert_eq!(out[0].report.truth, Some(6));
        assert_eq!(link.published[0].trained_at, Some(61));
        assert!(out[1].report.partial);
    }

    #[test]
    fn buffer_saturates_at_forty() {
        let cfg = config();
        let mut st = SensorState::new(&cfg);
        let reg = OuiRegistry::fixture();
        let mut clock = ManualClock::new(0);
        let mut link = FakeLink::default();
        let mut input = (0..42).flat_map(|w| frames(w, 2)).peekable();
        for w in 0..41 {
            link.groundtruth = Some(gt(2, w * 60 + 30));
            let o = run_window(&mut st, &cfg, &reg, &mut input, &mut clock, &mut link).unwrap().unwrap();
            assert!(o.retrained);
        }
        assert_eq!(st.buffer.len(), 40);
    }

    #[test]
    fn offline_reports_are_queued_then_delivered() {
        let cfg = SensorConfig { publish_environment: true, ..config() };
        let mut st = SensorState::new(&cfg);
        let reg = OuiRegistry::fixture();
        let mut clock = ManualClock::new(0);
        let mut link = FakeLink { down: true, ..Default::default() };
        let mut input = (0..4).flat_map(|w| frames(w, 1)).peekable();
        for _ in 0..2 {
            run_window(&mut st, &cfg, &reg, &mut input, &mut clock, &mut link).unwrap();
        }
        assert_eq!(st.queued(), 2);
        link.down = false;
        let o = run_window(&mut st, &cfg, &reg, &mut input, &mut clock, &mut link).unwrap().unwrap();
        assert_eq!(o.queued, 0);
        let starts: Vec<i64> = link.published.iter().map(|p| p.window_start).collect();
        assert_eq!(starts, vec![1, 61, 121]);
        assert!(o.report.environment.is_some());
    }

    #[test]
    fn outbox_is_bounded() {
        let cfg = config();
        let mut st = SensorState::new(&cfg);
        let p = SensorReport {
            room_id: "lab".into(),
            window_start: 0,
            estimate_raw: 0.0,
            estimate: 0,
            params_used: st.params,
            trained_at: None,
            snapshot: CounterSnapshot::zeros(&cfg.grid, 0, 60.0),
            environment: None,
            truth: None,
            partial: false,
        }
        .to_payload();
        for i in 0..1005 {
            st.enqueue(EstimatePayload { window_start: i, ..p.clone() });
        }
        assert_eq!(st.queued(), OUTBOX_CAPACITY);
        assert_eq!(st.dropped_reports(), 5);
        assert_eq!(st.outbox.front().unwrap().window_start, 5);
    }

    #[test]
    fn published_estimate_matches_params() {
        let cfg = config();
        let mut st = SensorState::new(&cfg);
        let reg = OuiRegistry::fixture();
        let mut clock = ManualClock::new(0);
        let mut link = FakeLink { groundtruth: Some(gt(5, 0)), ..Default::default() };
        let out = run_all(&mut st, &cfg, &reg, (0..3).flat_map(|w| frames(w, 4)), &mut clock, &mut link).unwrap();
        for o in &out {
            assert_eq!(estimate(&o.report.params_used, &o.report.snapshot).unwrap(), o.report.estimate_raw);
            let p = o.report.to_payload();
            assert_eq!(p.snapshot().unwrap(), o.report.snapshot);
            assert_eq!(p.params().unwrap(), o.report.params_used);
        }
    }
}
