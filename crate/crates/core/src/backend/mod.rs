//! Backend service state: retained ground truth, report ingestion, time-series queries.
//!
//! Every mutation is appended to the [`EventLog`] before it is applied, and
//! [`Backend::open`] rebuilds the full state by replaying the log.

mod log;
mod wire;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::estimator::TrainingSample;
use crate::message::{validate_room_id, EnvironmentPayload, EstimatePayload, GroundTruthMsg, MessageError};

pub use self::log::{file_name_for, Event, EventLog, LogEntry, ParamsPoint};
pub use self::wire::{handle_line, LocalLink, Request, RequestOp, Response, TcpLink};

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("room {0:?} is not registered")]
    UnknownRoom(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("invalid time range: from {from} is after to {to}")]
    InvalidRange { from: i64, to: i64 },
    #[error("event log: {0}")]
    Io(#[from] std::io::Error),
}

impl From<MessageError> for BackendError {
    fn from(e: MessageError) -> Self {
        BackendError::Validation(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomInfo {
    pub room_id: String,
    pub seats: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_m2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub rooms: Vec<RoomInfo>,
    /// Event-log directory; in-memory only when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeriesKind {
    Occupancy,
    Environment,
    Params,
}

impl FromStr for SeriesKind {
    type Err = BackendError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "occupancy" => Ok(SeriesKind::Occupancy),
            "environment" => Ok(SeriesKind::Environment),
            "params" => Ok(SeriesKind::Params),
            _ => Err(BackendError::Validation(format!(
                "unknown series kind {s:?} (expected occupancy, environment or params)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyPoint {
    /// Window start, UTC epoch seconds.
    pub ts: i64,
    pub window_duration_s: f64,
    pub estimate: u32,
    pub estimate_raw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<u32>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub partial: bool,
}

impl From<&EstimatePayload> for OccupancyPoint {
    fn from(p: &EstimatePayload) -> Self {
        Self {
            ts: p.window_start,
            window_duration_s: p.window_duration_s,
            estimate: p.estimate,
            estimate_raw: p.estimate_raw,
            truth: p.truth,
            partial: p.partial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeriesRecord {
    Occupancy(OccupancyPoint),
    Environment(EnvironmentPayload),
    Params(ParamsPoint),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatestState {
    pub room: RoomInfo,
    pub occupancy: Option<OccupancyPoint>,
    pub environment: Option<EnvironmentPayload>,
    pub params: Option<ParamsPoint>,
    pub groundtruth: Option<GroundTruthMsg>,
}

/// Acknowledgment of an ingested report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    /// The (room, window_start) pair was already stored; nothing changed.
    pub duplicate: bool,
}

#[derive(Debug, Clone)]
struct RoomState {
    info: RoomInfo,
    retained: Option<GroundTruthMsg>,
    estimates: Vec<EstimatePayload>,
    windows: HashSet<i64>,
    environment: Vec<EnvironmentPayload>,
    params: Vec<ParamsPoint>,
}

impl RoomState {
    fn new(info: RoomInfo) -> Self {
        Self {
            info,
            retained: None,
            estimates: Vec::new(),
            windows: HashSet::new(),
            environment: Vec::new(),
            params: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub struct Backend {
    rooms: BTreeMap<String, RoomState>,
    log: Option<EventLog>,
    events: u64,
}

pub type SharedBackend = Arc<Mutex<Backend>>;

fn in_range(ts: i64, from: Option<i64>, to: Option<i64>) -> bool {
    from.is_none_or(|f| ts >= f) && to.is_none_or(|t| ts <= t)
}

impl Backend {
    pub fn in_memory(rooms: Vec<RoomInfo>) -> Result<Self, BackendError> {
        Self::open(&BackendConfig { rooms, log_dir: None })
    }

    /// Register rooms and replay the event log, if configured.
    pub fn open(config: &BackendConfig) -> Result<Self, BackendError> {
        let mut rooms = BTreeMap::new();
        for r in &config.rooms {
            validate_room_id(&r.room_id)?;
            if r.seats == 0 {
                return Err(BackendError::Validation(format!("room {:?} must have at least one seat", r.room_id)));
            }
            if rooms.insert(r.room_id.clone(), RoomState::new(r.clone())).is_some() {
                return Err(BackendError::Validation(format!("room {:?} registered twice", r.room_id)));
            }
        }
        let mut backend = Self { rooms, log: None, events: 0 };
        if let Some(dir) = &config.log_dir {
            let (log, entries) = EventLog::open(dir)?;
            for entry in entries {
                if backend.rooms.contains_key(entry.event.room()) {
                    backend.apply(entry.event);
                } else {
                    ::log::warn!("replay: skipping event for unregistered room {:?}", entry.event.room());
                }
            }
            backend.log = Some(log);
        }
        Ok(backend)
    }

    pub fn into_shared(self) -> SharedBackend {
        Arc::new(Mutex::new(self))
    }

    /// Number of events applied (replayed or ingested).
    pub fn event_count(&self) -> u64 {
        self.events
    }

    pub fn rooms(&self) -> Vec<RoomInfo> {
        self.rooms.values().map(|r| r.info.clone()).collect()
    }

    fn room(&self, room: &str) -> Result<&RoomState, BackendError> {
        self.rooms.get(room).ok_or_else(|| BackendError::UnknownRoom(room.to_string()))
    }

    fn apply(&mut self, event: Event) {
        let Some(state) = self.rooms.get_mut(event.room()) else {
            return;
        };
        self.events += 1;
        match event {
            Event::Estimate(p) => {
                if state.windows.insert(p.window_start) {
                    state.estimates.push(p);
                }
            }
            Event::Groundtruth(m) => state.retained = Some(m),
            Event::Environment(p) => state.environment.push(p),
            Event::ParamsUpdate(p) => state.params.push(p),
        }
    }

    fn record(&mut self, now: i64, event: Event) -> Result<(), BackendError> {
        if let Some(log) = &mut self.log {
            log.append(now, event.clone())?;
        }
        self.apply(event);
        Ok(())
    }

    /// Publish a retained ground-truth message, replacing any previous one for the room.
    pub fn set_groundtruth(&mut self, room: &str, count: u32, ttl_s: u64, now: i64) -> Result<GroundTruthMsg, BackendError> {
        let msg = GroundTruthMsg { room: room.to_string(), count, issued_at: now, ttl_s };
        self.publish_groundtruth(msg.clone(), now)?;
        Ok(msg)
    }

    pub fn publish_groundtruth(&mut self, msg: GroundTruthMsg, now: i64) -> Result<(), BackendError> {
        self.room(&msg.room)?;
        msg.validate()?;
        self.record(now, Event::Groundtruth(msg))
    }

    /// The retained message, whether or not its TTL has run out; sensors apply the TTL.
    pub fn groundtruth(&self, room: &str) -> Result<Option<GroundTruthMsg>, BackendError> {
        Ok(self.room(room)?.retained.clone())
    }

    pub fn ingest_estimate(&mut self, payload: EstimatePayload, now: i64) -> Result<Ack, BackendError> {
        let state = self.room(&payload.room)?;
        payload.validate()?;
        if state.windows.contains(&payload.window_start) {
            return Ok(Ack { duplicate: true });
        }
        let changed = match state.params.last() {
            None => true,
            Some(p) => {
                p.trained_at != payload.trained_at
                    || p.alpha != payload.alpha
                    || p.beta != payload.beta
                    || p.theta_dbm != payload.theta_dbm
            }
        };
        let params = changed.then(|| ParamsPoint {
            room: payload.room.clone(),
            ts: payload.trained_at.unwrap_or(payload.window_start),
            alpha: payload.alpha,
            beta: payload.beta,
            theta_dbm: payload.theta_dbm,
            trained_at: payload.trained_at,
        });
        self.record(now, Event::Estimate(payload))?;
        if let Some(p) = params {
            self.record(now, Event::ParamsUpdate(p))?;
        }
        Ok(Ack { duplicate: false })
    }

    pub fn ingest_environment(&mut self, mut payload: EnvironmentPayload, now: i64) -> Result<(), BackendError> {
        self.room(&payload.room)?;
        payload.ts.get_or_insert(now);
        self.record(now, Event::Environment(payload))
    }

    /// Records of one kind with timestamps in `[from, to]`, ascending by time.
    pub fn query_series(
        &self,
        room: &str,
        kind: SeriesKind,
        from: Option<i64>,
        to: Option<i64>,
    ) -> Result<Vec<SeriesRecord>, BackendError> {
        let state = self.room(room)?;
        if let (Some(from), Some(to)) = (from, to) {
            if from > to {
                return Err(BackendError::InvalidRange { from, to });
            }
        }
        let mut out: Vec<(i64, SeriesRecord)> = match kind {
            SeriesKind::Occupancy => state
                .estimates
                .iter()
                .filter(|p| in_range(p.window_start, from, to))
                .map(|p| (p.window_start, SeriesRecord::Occupancy(p.into())))
                .collect(),
            SeriesKind::Environment => state
                .environment
                .iter()
                .filter(|p| in_range(p.ts.unwrap_or_default(), from, to))
                .map(|p| (p.ts.unwrap_or_default(), SeriesRecord::Environment(p.clone())))
                .collect(),
            SeriesKind::Params => state
                .params
                .iter()
                .filter(|p| in_range(p.ts, from, to))
                .map(|p| (p.ts, SeriesRecord::Params(p.clone())))
                .collect(),
        };
        out.sort_by_key(|(ts, _)| *ts);
        Ok(out.into_iter().map(|(_, r)| r).collect())
    }

    pub fn latest(&self, room: &str) -> Result<LatestState, BackendError> {
        let state = self.room(room)?;
        Ok(LatestState {
            room: state.info.clone(),
            occupancy: state.estimates.iter().max_by_key(|p| p.window_start).map(OccupancyPoint::from),
            environment: state.environment.iter().max_by_key(|p| p.ts).cloned(),
            params: state.params.last().cloned(),
            groundtruth: state.retained.clone(),
        })
    }

    pub fn latest_estimate(&self, room: &str) -> Result<Option<EstimatePayload>, BackendError> {
        Ok(self.room(room)?.estimates.iter().max_by_key(|p| p.window_start).cloned())
    }

    /// Reports that carried an accepted ground truth, as a labeled dataset in window order.
    pub fn labeled_dataset(&self, room: &str) -> Result<LabeledDataset, BackendError> {
        let state = self.room(room)?;
        let mut samples: Vec<(i64, TrainingSample)> = state
            .estimates
            .iter()
            .filter_map(|p| Some((p.window_start, TrainingSample { snapshot: p.snapshot()?, truth: p.truth? })))
            .collect();
        samples.sort_by_key(|(ts, _)| *ts);
        Ok(LabeledDataset {
            room_id: state.info.room_id.clone(),
            seats: state.info.seats,
            area_m2: state.info.area_m2,
            samples: samples.into_iter().map(|(_, s)| s).collect(),
        })
    }
}
