//! Topic names and JSON payloads shared by sensor nodes and the backend.

// `!(x > y)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::counter::CounterSnapshot;
use crate::estimator::ModelParams;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MessageError {
    #[error("invalid room id {0:?}: must be non-empty and contain no '/'")]
    InvalidRoom(String),
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
    #[error("{0}")]
    Invalid(String),
}

pub fn validate_room_id(room: &str) -> Result<(), MessageError> {
    if room.is_empty() || room.contains('/') || room.chars().any(char::is_whitespace) {
        return Err(MessageError::InvalidRoom(room.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopicKind {
    Estimate,
    Groundtruth,
    Environment,
}

impl TopicKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TopicKind::Estimate => "estimate",
            TopicKind::Groundtruth => "groundtruth",
            TopicKind::Environment => "environment",
        }
    }
}

/// `occupancy/<room>/<kind>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Topic {
    pub room: String,
    pub kind: TopicKind,
}

impl Topic {
    pub fn new(room: impl Into<String>, kind: TopicKind) -> Result<Self, MessageError> {
        let room = room.into();
        validate_room_id(&room)?;
        Ok(Self { room, kind })
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "occupancy/{}/{}", self.room, self.kind.as_str())
    }
}

impl FromStr for Topic {
    type Err = MessageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || MessageError::InvalidTopic(s.to_string());
        let mut parts = s.split('/');
        let (Some("occupancy"), Some(room), Some(kind), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let kind = match kind {
            "estimate" => TopicKind::Estimate,
            "groundtruth" => TopicKind::Groundtruth,
            "environment" => TopicKind::Environment,
            _ => return Err(bad()),
        };
        Topic::new(room, kind).map_err(|_| bad())
    }
}

/// Administrator-supplied head count, valid for `ttl_s` seconds after `issued_at`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthMsg {
    pub room: String,
    pub count: u32,
    /// UTC epoch seconds.
    pub issued_at: i64,
    pub ttl_s: u64,
}

impl GroundTruthMsg {
    pub fn validate(&self) -> Result<(), MessageError> {
        validate_room_id(&self.room)?;
        if self.ttl_s == 0 {
            return Err(MessageError::Invalid("ttl_s must be positive".into()));
        }
        Ok(())
    }

    pub fn is_expired(&self, now: i64) -> bool {
        now > self.issued_at.saturating_add(self.ttl_s.min(i64::MAX as u64) as i64)
    }
}

/// Synthetic ambient readings published alongside estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub temperature_c: f64,
    pub humidity_pct: f64,
    pub pressure_hpa: f64,
    pub light_lux: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentPayload {
    pub room: String,
    #[serde(flatten)]
    pub reading: Environment,
    /// UTC epoch seconds of the reading; the backend stamps arrival time when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<i64>,
}

/// Wire form of a sensor report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatePayload {
    pub room: String,
    pub window_start: i64,
    pub window_duration_s: f64,
    pub estimate_raw: f64,
    pub estimate: u32,
    pub alpha: f64,
    pub beta: f64,
    pub theta_dbm: f64,
    pub n_valid: Vec<u32>,
    pub n_random: Vec<u32>,
    /// Threshold grid the counts refer to.
    #[serde(default)]
    pub thresholds: Vec<f64>,
    /// When the parameters used were last retrained; absent while on the cold-start prior.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trained_at: Option<i64>,
    /// Ground-truth count accepted for this window, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<u32>,
    /// The frame source ran out before the window closed.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub partial: bool,
}

impl EstimatePayload {
    pub fn validate(&self) -> Result<(), MessageError> {
        validate_room_id(&self.room)?;
        let n = self.n_valid.len();
        if self.n_random.len() != n || (!self.thresholds.is_empty() && self.thresholds.len() != n) {
            return Err(MessageError::Invalid(format!(
                "n_valid ({n}), n_random ({}) and thresholds ({}) lengths disagree",
                self.n_random.len(),
                self.thresholds.len()
            )));
        }
        if !self.estimate_raw.is_finite() || !(self.window_duration_s > 0.0) {
            return Err(MessageError::Invalid("estimate_raw and window_duration_s must be finite and positive".into()));
        }
        Ok(())
    }

    /// Rebuild the counter snapshot. Needs the threshold list.
    pub fn snapshot(&self) -> Option<CounterSnapshot> {
        if self.thresholds.is_empty() || self.thresholds.len() != self.n_valid.len() {
            return None;
        }
        Some(CounterSnapshot {
            window_start: self.window_start,
            window_duration_s: self.window_duration_s,
            thresholds: self.thresholds.clone(),
            n_valid: self.n_valid.clone(),
            n_random: self.n_random.clone(),
        })
    }

    /// Recover the parameters, locating theta in the threshold list.
    pub fn params(&self) -> Option<ModelParams> {
        let theta_index = self.thresholds.iter().position(|&t| t == self.theta_dbm)?;
        Some(ModelParams { alpha: self.alpha, beta: self.beta, theta_index, theta_dbm: self.theta_dbm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topic_round_trip() {
        let t: Topic = "occupancy/lab-1/estimate".parse().unwrap();
        assert_eq!(t, Topic::new("lab-1", TopicKind::Estimate).unwrap());
        assert_eq!(t.to_string(), "occupancy/lab-1/estimate");
        for bad in ["occupancy//estimate", "occupancy/a/b/estimate", "occ/a/estimate", "occupancy/a/other"] {
            assert!(bad.parse::<Topic>().is_err(), "{bad}");
        }
    }

    #[test]
    fn ttl_boundary() {
        let m = GroundTruthMsg { room: "a".into(), count: 3, issued_at: 100, ttl_s: 60 };
        assert!(!m.is_expired(150));
        assert!(!m.is_expired(160));
        assert!(m.is_expired(161));
        assert!(GroundTruthMsg { ttl_s: 0, ..m }.validate().is_err());
    }

    #[test]
    fn environment_payload_is_flat() {
        let p = EnvironmentPayload {
            room: "a".into(),
            reading: Environment { temperature_c: 21.0, humidity_pct: 40.0, pressure_hpa: 1013.0, light_lux: 300.0 },
            ts: None,
        };
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["temperature_c"], 21.0);
        assert!(v.get("ts").is_none());
        assert_eq!(serde_json::from_value::<EnvironmentPayload>(v).unwrap(), p);
    }
}
