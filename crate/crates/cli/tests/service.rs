use std::path::Path;
use std::process::Command;

use probecount::backend::{BackendConfig, RoomInfo, TcpLink};
use probecount::frame::write_pcap;
use probecount::sensor::BackendLink;
use probecount::simulator::{generate_trace, Scenario};
use probecount::OuiRegistry;
use probecount_cli::server::{start, Running, ServeConfig};
use serde_json::{json, Value};

fn config(log_dir: &Path, static_dir: Option<&Path>) -> ServeConfig {
    ServeConfig {
        backend: BackendConfig {
            rooms: vec![
                RoomInfo { room_id: "lab".into(), seats: 30, area_m2: Some(60.0) },
                RoomInfo { room_id: "hall".into(), seats: 120, area_m2: None },
            ],
            log_dir: Some(log_dir.to_path_buf()),
        },
        http_addr: "127.0.0.1:0".into(),
        tcp_addr: "127.0.0.1:0".into(),
        static_dir: static_dir.map(Path::to_path_buf),
    }
}

struct Client {
    agent: ureq::Agent,
    base: String,
}

impl Client {
    fn new(running: &Running) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self { agent, base: format!("http://{}", running.http_addr) }
    }

    fn get(&self, path: &str) -> (u16, String) {
        let mut resp = self.agent.get(&format!("{}{path}", self.base)).call().unwrap();
        (resp.status().as_u16(), resp.body_mut().read_to_string().unwrap())
    }

    fn get_json(&self, path: &str) -> Value {
        let (status, body) = self.get(path);
        assert_eq!(status, 200, "{path}: {body}");
        serde_json::from_str(&body).unwrap()
    }

    fn post(&self, path: &str, body: &str) -> (u16, Value) {
        let mut resp = self
            .agent
            .post(&format!("{}{path}", self.base))
            .header("content-type", "application/json")
            .send(body)
            .unwrap();
        let status = resp.status().as_u16();
        (status, serde_json::from_str(&resp.body_mut().read_to_string().unwrap()).unwrap())
    }
}

fn scenario() -> Scenario {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scenario_small.json"))
        .unwrap();
    let mut s: Scenario = serde_json::from_str(&text).unwrap();
    s.schedule.intervals.truncate(6);
    s
}

#[test]
fn http_api_and_sensor_round_trip() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("log");
    let running = rt.block_on(start(&config(&logs, None))).unwrap();
    let c = Client::new(&running);

    let rooms = c.get_json("/rooms");
    assert_eq!(rooms.as_array().unwrap().len(), 2);
    let latest = c.get_json("/rooms/lab/latest");
    assert!(latest["occupancy"].is_null());

    let (status, body) = c.post("/rooms/lab/groundtruth", r#"{"count":12,"ttl_s":600}"#);
    assert_eq!(status, 201, "{body}");
    assert_eq!(body["count"], 12);
    let (status, body) = c.post("/rooms/lab/groundtruth", r#"{"count":-1,"ttl_s":600}"#);
    assert_eq!(status, 400);
    assert_eq!(body["path"], "count");
    let (status, _) = c.post("/rooms/lab/groundtruth", r#"{"count":3,"ttl_s":0}"#);
    assert_eq!(status, 400);
    let (status, _) = c.post("/rooms/attic/groundtruth", r#"{"count":3,"ttl_s":60}"#);
    assert_eq!(status, 404);
    assert_eq!(c.get("/rooms/attic/latest").0, 404);
    assert_eq!(c.get("/rooms/lab/series?kind=bogus").0, 400);
    assert_eq!(c.get("/rooms/lab/series?from=10&to=5").0, 400);

    // Line-JSON endpoint serves the retained ground truth.
    let mut link = TcpLink::new(running.tcp_addr.to_string());
    assert_eq!(link.fetch_groundtruth("lab").unwrap().unwrap().count, 12);

    // A sensor node replaying a capture against the service.
    let trace = generate_trace(&scenario(), &OuiRegistry::fixture().ouis()).unwrap();
    let pcap = dir.path().join("trace.pcap");
    write_pcap(&pcap, &trace.records).unwrap();
    let sensor_cfg = dir.path().join("sensor.json");
    std::fs::write(&sensor_cfg, json!({"room_id": "lab", "window_duration_s": 300}).to_string()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_probecount"))
        .args(["sensor", "--config", sensor_cfg.to_str().unwrap(), "--capture", pcap.to_str().unwrap()])
        .env("PROBECOUNT_BACKEND", running.tcp_addr.to_string())
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reports: Vec<Value> =
        String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(reports.len() >= 5, "{} reports", reports.len());
    assert_eq!(reports[0]["truth"], 12);
    assert!(reports[1..].iter().all(|r| r["truth"].is_null()));

    let series = c.get_json("/rooms/lab/series?kind=occupancy");
    let series = series.as_array().unwrap();
    assert_eq!(series.len(), reports.len());
    for (point, report) in series.iter().zip(&reports) {
        assert_eq!(point["ts"], report["window_start"]);
        assert_eq!(point["estimate"], report["estimate"]);
    }
    let params = c.get_json("/rooms/lab/series?kind=params");
    assert_eq!(params.as_array().unwrap().len(), 1);
    let latest = c.get_json("/rooms/lab/latest");
    assert_eq!(latest["occupancy"]["estimate"], reports.last().unwrap()["estimate"]);
    let from = reports[1]["window_start"].as_i64().unwrap();
    let to = reports[2]["window_start"].as_i64().unwrap();
    assert_eq!(c.get_json(&format!("/rooms/lab/series?from={from}&to={to}")).as_array().unwrap().len(), 2);
    assert_eq!(c.get_json("/rooms/lab/series?from=0&to=10").as_array().unwrap().len(), 0);

    // Restart: replaying the log answers every query identically.
    let before: Vec<String> = ["/rooms", "/rooms/lab/latest", "/rooms/lab/series?kind=occupancy", "/rooms/lab/series?kind=params"]
        .iter()
        .map(|p| c.get(p).1)
        .collect();
    running.abort();
    let restarted = rt.block_on(start(&config(&logs, None))).unwrap();
    let c2 = Client::new(&restarted);
    let after: Vec<String> = ["/rooms", "/rooms/lab/latest", "/rooms/lab/series?kind=occupancy", "/rooms/lab/series?kind=params"]
        .iter()
        .map(|p| c2.get(p).1)
        .collect();
    assert_eq!(before, after);
    restarted.abort();
}

#[test]
fn sensor_without_backend_still_reports() {
    let dir = tempfile::tempdir().unwrap();
    let trace = generate_trace(&scenario(), &OuiRegistry::fixture().ouis()).unwrap();
    let pcap = dir.path().join("trace.pcap");
    write_pcap(&pcap, &trace.records).unwrap();
    let cfg = dir.path().join("sensor.json");
    std::fs::write(&cfg, json!({"room_id": "lab"}).to_string()).unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_probecount"))
        .args(["sensor", "--config", cfg.to_str().unwrap(), "--capture", pcap.to_str().unwrap()])
        .args(["--backend", &port.to_string()])
        .env("RUST_LOG", "error")
        .output()
        .unwrap();
    assert!(out.status.success());
    let lines = String::from_utf8(out.stdout).unwrap();
    assert!(lines.lines().count() >= 5);
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["params_used"]["alpha"], 1.0);
    assert_eq!(first["params_used"]["beta"], 0.1);
    assert_eq!(first["params_used"]["theta_dbm"], -80.0);
}

#[test]
fn static_assets_are_served() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let assets = dir.path().join("www");
    std::fs::create_dir(&assets).unwrap();
    std::fs::write(assets.join("index.html"), "<h1>rooms</h1>").unwrap();
    let running = rt.block_on(start(&config(&dir.path().join("log"), Some(&assets)))).unwrap();
    let c = Client::new(&running);
    assert_eq!(c.get("/index.html"), (200, "<h1>rooms</h1>".to_string()));
    assert_eq!(c.get_json("/rooms").as_array().unwrap().len(), 2);
    running.abort();
}
