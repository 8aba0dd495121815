//! Line-delimited JSON protocol: one request object per line, one response per line.
//!
//! ```text
//! {"op":"publish","topic":"occupancy/lab/estimate","payload":{...}}
//! {"op":"fetch","topic":"occupancy/lab/groundtruth"}
//! ```

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, BackendError, SharedBackend};
use crate::message::{EnvironmentPayload, EstimatePayload, GroundTruthMsg, Topic, TopicKind};
use crate::sensor::{BackendLink, Clock, LinkError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestOp {
    Publish,
    Fetch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub op: RequestOp,
    pub topic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub duplicate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Location of a schema error inside the request, e.g. `payload.count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl Response {
    fn ok(payload: Option<Value>) -> Self {
        Self { ok: true, payload, duplicate: false, error: None, path: None }
    }

    fn error(message: impl Into<String>, path: Option<String>) -> Self {
        Self { ok: false, payload: None, duplicate: false, error: Some(message.into()), path }
    }
}

impl From<BackendError> for Response {
    fn from(e: BackendError) -> Self {
        Response::error(e.to_string(), None)
    }
}

fn parse<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T, Response> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." { prefix.to_string() } else { format!("{prefix}.{inner}") };
        Response::error(format!("schema error at {path}: {}", e.inner()), Some(path))
    })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("payload types serialize")
}

fn topic_room_matches(topic: &Topic, room: &str) -> Result<(), Response> {
    if topic.room == room {
        Ok(())
    } else {
        Err(Response::error(
            format!("payload room {room:?} does not match topic {topic}"),
            Some("payload.room".into()),
        ))
    }
}

fn dispatch(backend: &mut Backend, line: &str, now: i64) -> Result<Response, Response> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| Response::error(format!("malformed JSON: {e}"), None))?;
    let req: Request = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Response::error(format!("schema error at {path}: {}", e.inner()), Some(path))
    })?;
    let topic: Topic = req
        .topic
        .parse()
        .map_err(|e: crate::message::MessageError| Response::error(e.to_string(), Some("topic".into())))?;
    match req.op {
        RequestOp::Fetch => {
            let payload = match topic.kind {
                TopicKind::Groundtruth => backend.groundtruth(&topic.room)?.map(|m| to_value(&m)),
                TopicKind::Estimate => backend.latest_estimate(&topic.room)?.map(|p| to_value(&p)),
                TopicKind::Environment => backend.latest(&topic.room)?.environment.map(|p| to_value(&p)),
            };
            Ok(Response::ok(Some(payload.unwrap_or(Value::Null))))
        }
        RequestOp::Publish => {
            let payload = req
                .payload
                .ok_or_else(|| Response::error("publish requires a payload", Some("payload".into())))?;
            match topic.kind {
                TopicKind::Estimate => {
                    let p: EstimatePayload = parse(payload, "payload")?;
                    topic_room_matches(&topic, &p.room)?;
                    let ack = backend.ingest_estimate(p, now)?;
                    Ok(Response { duplicate: ack.duplicate, ..Response::ok(None) })
                }
                TopicKind::Groundtruth => {
                    let m: GroundTruthMsg = parse(payload, "payload")?;
                    topic_room_matches(&topic, &m.room)?;
                    backend.publish_groundtruth(m, now)?;
                    Ok(Response::ok(None))
                }
                TopicKind::Environment => {
                    let p: EnvironmentPayload = parse(payload, "payload")?;
                    topic_room_matches(&topic, &p.room)?;
                    backend.ingest_environment(p, now)?;
                    Ok(Response::ok(None))
                }
            }
        }
    }
}

/// Handle one request line.
pub fn handle_line(backend: &mut Backend, line: &str, now: i64) -> Response {
    dispatch(backend, line, now).unwrap_or_else(|e| e)
}

fn response_to_result(resp: Response) -> Result<Option<Value>, LinkError> {
    if resp.ok {
        Ok(resp.payload.filter(|v| !v.is_null()))
    } else {
        Err(LinkError::Rejected(resp.error.unwrap_or_default()))
    }
}

fn publish_request<T: Serialize>(room: &str, kind: TopicKind, payload: &T) -> Result<String, LinkError> {
    let topic = Topic::new(room, kind).map_err(|e| LinkError::Rejected(e.to_string()))?;
    let req = Request { op: RequestOp::Publish, topic: topic.to_string(), payload: Some(to_value(payload)) };
    Ok(serde_json::to_string(&req).expect("request serializes"))
}

fn fetch_request(room: &str, kind: TopicKind) -> Result<String, LinkError> {
    let topic = Topic::new(room, kind).map_err(|e| LinkError::Rejected(e.to_string()))?;
    let req = Request { op: RequestOp::Fetch, topic: topic.to_string(), payload: None };
    Ok(serde_json::to_string(&req).expect("request serializes"))
}

fn decode_groundtruth(v: Option<Value>) -> Result<Option<GroundTruthMsg>, LinkError> {
    v.map(|v| serde_json::from_value(v).map_err(|e| LinkError::Rejected(format!("bad ground-truth payload: {e}"))))
        .transpose()
}

/// In-process link that still goes through the JSON protocol.
pub struct LocalLink<C> {
    backend: SharedBackend,
    clock: C,
}

impl<C: Clock> LocalLink<C> {
    pub fn new(backend: SharedBackend, clock: C) -> Self {
        Self { backend, clock }
    }

    fn call(&mut self, line: &str) -> Result<Option<Value>, LinkError> {
        let resp = {
            let mut b = self.backend.lock().map_err(|_| LinkError::Unreachable("backend lock poisoned".into()))?;
            handle_line(&mut b, line, self.clock.now())
        };
        response_to_result(resp)
    }
}

impl<C: Clock> BackendLink for LocalLink<C> {
    fn fetch_groundtruth(&mut self, room: &str) -> Result<Option<GroundTruthMsg>, LinkError> {
        decode_groundtruth(self.call(&fetch_request(room, TopicKind::Groundtruth)?)?)
    }

    fn publish_estimate(&mut self, payload: &EstimatePayload) -> Result<(), LinkError> {
        self.call(&publish_request(&payload.room, TopicKind::Estimate, payload)?).map(drop)
    }

    fn publish_environment(&mut self, payload: &EnvironmentPayload) -> Result<(), LinkError> {
        self.call(&publish_request(&payload.room, TopicKind::Environment, payload)?).map(drop)
    }
}

/// Blocking TCP client; reconnects lazily after a failure.
#[derive(Debug)]
pub struct TcpLink {
    addr: String,
    timeout: Duration,
    conn: Option<BufReader<TcpStream>>,
}

impl TcpLink {
    pub fn new(addr: impl Into<String>) -> Self {
        Self { addr: addr.into(), timeout: Duration::from_secs(5), conn: None }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn connect(&self) -> std::io::Result<BufReader<TcpStream>> {
        let mut last = None;
        for addr in self.addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&addr, self.timeout) {
                Ok(s) => {
                    s.set_read_timeout(Some(self.timeout))?;
                    s.set_write_timeout(Some(self.timeout))?;
                    return Ok(BufReader::new(s));
                }
                Err(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or_else(|| std::io::Error::other(format!("{} resolved to no addresses", self.addr))))
    }

    fn roundtrip(&mut self, line: &str) -> std::io::Result<Response> {
        if self.conn.is_none() {
            self.conn = Some(self.connect()?);
        }
        let conn = self.conn.as_mut().expect("connected");
        let stream = conn.get_mut();
        stream.write_all(line.as_bytes())?;
        stream.write_all(b"\n")?;
        stream.flush()?;
        let mut reply = String::new();
        if conn.read_line(&mut reply)? == 0 {
            return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "connection closed"));
        }
        serde_json::from_str(&reply).map_err(std::io::Error::other)
    }

    /// Send one raw request line and return the parsed response.
    pub fn request(&mut self, line: &str) -> Result<Response, LinkError> {
        self.roundtrip(line).map_err(|e| {
            self.conn = None;
            LinkError::Unreachable(format!("{}: {e}", self.addr))
        })
    }

    fn call(&mut self, line: &str) -> Result<Option<Value>, LinkError> {
        response_to_result(self.request(line)?)
    }
}

impl BackendLink for TcpLink {
    fn fetch_groundtruth(&mut self, room: &str) -> Result<Option<GroundTruthMsg>, LinkError> {
        decode_groundtruth(self.call(&fetch_request(room, TopicKind::Groundtruth)?)?)
    }

    fn publish_estimate(&mut self, payload: &EstimatePayload) -> Result<(), LinkError> {
        self.call(&publish_request(&payload.room, TopicKind::Estimate, payload)?).map(drop)
    }

    fn publish_environment(&mut self, payload: &EnvironmentPayload) -> Result<(), LinkError> {
        self.call(&publish_request(&payload.room, TopicKind::Environment, payload)?).map(drop)
    }
}
