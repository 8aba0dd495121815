//! Backend service: HTTP query API plus the line-JSON endpoint sensors talk to.

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use probecount::backend::{handle_line, BackendConfig, BackendError, SeriesKind, SharedBackend};
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;
use tower_http::services::ServeDir;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeConfig {
    #[serde(flatten)]
    pub backend: BackendConfig,
    #[serde(default = "default_http")]
    pub http_addr: String,
    #[serde(default = "default_tcp")]
    pub tcp_addr: String,
    /// Directory of dashboard assets served under `/`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_dir: Option<PathBuf>,
}

fn default_http() -> String {
    "127.0.0.1:8080".into()
}

fn default_tcp() -> String {
    probecount::sensor::DEFAULT_BACKEND.into()
}

pub fn now_s() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs() as i64)
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn bad_request(error: String, path: Option<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, body: ErrorBody { error, path } }
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        let status = match e {
            BackendError::UnknownRoom(_) => StatusCode::NOT_FOUND,
            BackendError::Validation(_) | BackendError::InvalidRange { .. } => StatusCode::BAD_REQUEST,
            BackendError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, body: ErrorBody { error: e.to_string(), path: None } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn lock(b: &SharedBackend) -> std::sync::MutexGuard<'_, probecount::backend::Backend> {
    b.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

#[derive(Debug, Deserialize)]
struct SeriesQuery {
    kind: Option<String>,
    from: Option<i64>,
    to: Option<i64>,
}

#[derive(Debug, Deserialize)]
struct GroundTruthBody {
    count: u32,
    ttl_s: u64,
}

async fn rooms(State(b): State<SharedBackend>) -> Json<Vec<probecount::backend::RoomInfo>> {
    Json(lock(&b).rooms())
}

async fn series(
    State(b): State<SharedBackend>,
    Path(room): Path<String>,
    Query(q): Query<SeriesQuery>,
) -> ApiResult<Vec<probecount::backend::SeriesRecord>> {
    let kind: SeriesKind = q.kind.as_deref().unwrap_or("occupancy").parse()?;
    Ok(Json(lock(&b).query_series(&room, kind, q.from, q.to)?))
}

async fn latest(State(b): State<SharedBackend>, Path(room): Path<String>) -> ApiResult<probecount::backend::LatestState> {
    Ok(Json(lock(&b).latest(&room)?))
}

async fn post_groundtruth(
    State(b): State<SharedBackend>,
    Path(room): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<probecount::message::GroundTruthMsg>), ApiError> {
    let mut de = serde_json::Deserializer::from_slice(&body);
    let req: GroundTruthBody = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        ApiError::bad_request(format!("invalid body at {path}: {}", e.inner()), Some(path))
    })?;
    let msg = lock(&b).set_groundtruth(&room, req.count, req.ttl_s, now_s())?;
    Ok((StatusCode::CREATED, Json(msg)))
}

pub fn router(backend: SharedBackend, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/rooms", get(rooms))
        .route("/rooms/{id}/series", get(series))
        .route("/rooms/{id}/latest", get(latest))
        .route("/rooms/{id}/groundtruth", post(post_groundtruth))
        .with_state(backend);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn serve_connection(stream: TcpStream, backend: SharedBackend) -> std::io::Result<()> {
    let (read, mut write) = stream.into_split();
    let mut lines = BufReader::new(read).lines();
    while let Some(line) = lines.next_line().await? {
        if line.trim().is_empty() {
            continue;
        }
        let resp = handle_line(&mut lock(&backend), &line, now_s());
        let mut out = serde_json::to_string(&resp).map_err(std::io::Error::other)?;
        out.push('\n');
        write.write_all(out.as_bytes()).await?;
    }
    Ok(())
}

async fn serve_lines(listener: TcpListener, backend: SharedBackend) {
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                let backend = backend.clone();
                tokio::spawn(async move {
                    if let Err(e) = serve_connection(stream, backend).await {
                        log::debug!("connection {peer}: {e}");
                    }
                });
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
}

/// Both listeners, bound and serving.
pub struct Running {
    pub http_addr: SocketAddr,
    pub tcp_addr: SocketAddr,
    pub backend: SharedBackend,
    http: JoinHandle<std::io::Result<()>>,
    tcp: JoinHandle<()>,
}

impl Running {
    /// Run until either listener fails.
    pub async fn wait(self) -> anyhow::Result<()> {
        tokio::select! {
            r = self.http => r?.context("http server")?,
            r = self.tcp => r?,
        }
        Ok(())
    }

    pub fn abort(&self) {
        self.http.abort();
        self.tcp.abort();
    }
}

/// Open the backend (replaying its log) and bind both listeners.
pub async fn start(config: &ServeConfig) -> anyhow::Result<Running> {
    let backend = probecount::backend::Backend::open(&config.backend)
        .context("opening backend")?
        .into_shared();
    let http = TcpListener::bind(&config.http_addr)
        .await
        .with_context(|| format!("binding http listener on {}", config.http_addr))?;
    let tcp = TcpListener::bind(&config.tcp_addr)
        .await
        .with_context(|| format!("binding line-JSON listener on {}", config.tcp_addr))?;
    let http_addr = http.local_addr()?;
    let tcp_addr = tcp.local_addr()?;
    let app = router(backend.clone(), config.static_dir.clone());
    Ok(Running {
        http_addr,
        tcp_addr,
        backend: backend.clone(),
        http: tokio::spawn(async move { axum::serve(http, app).await }),
        tcp: tokio::spawn(serve_lines(tcp, backend)),
    })
}
