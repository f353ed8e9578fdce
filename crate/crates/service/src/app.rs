//! HTTP routes over the session store.
//!
//! Each session has one writer at a time (an async mutex held while the new
//! snapshot is computed) and any number of readers, which clone the `Arc` of
//! the last published snapshot and never block on a running mutation.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use linehue::ingest::{parse_timeseries, parse_trajectories, LineKind};
use linehue::pipeline::{render, render_lines_of, PipelineConfig};
use linehue::render::RenderOptions;
use linehue::synth::SynthParams;
use log::info;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

use crate::openapi::openapi_spec;
use crate::session::{
    Action, Dataset, ErrorKind, HueUpdate, ParamsUpdate, PreprocessRequest, ServiceError, Snapshot, StateView,
    TemplateRequest,
};

pub const DEFAULT_MAX_BODY_BYTES: usize = 256 * 1024 * 1024;
pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);
const MAX_RENDER_SCALE: u32 = 16;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub max_body_bytes: usize,
    pub idle_timeout: Duration,
    /// Pipeline settings for new sessions; requests may override them.
    pub defaults: PipelineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_body_bytes: DEFAULT_MAX_BODY_BYTES,
            idle_timeout: DEFAULT_IDLE_TIMEOUT,
            defaults: PipelineConfig::default(),
        }
    }
}

struct SessionHandle {
    writer: tokio::sync::Mutex<()>,
    current: RwLock<Arc<Snapshot>>,
    last_used: Mutex<Instant>,
}

impl SessionHandle {
    fn snapshot(&self) -> Arc<Snapshot> {
        *self.last_used.lock().unwrap() = Instant::now();
        Arc::clone(&self.current.read().unwrap())
    }
}

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Arc<SessionHandle>>>>,
    config: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self { sessions: Arc::default(), config: Arc::new(config) }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    /// Current snapshot of a session, if it exists.
    pub fn snapshot(&self, id: &str) -> Option<Arc<Snapshot>> {
        self.handle(id).ok().map(|h| h.snapshot())
    }

    /// Drops sessions idle for longer than the timeout; returns how many.
    pub fn evict_idle(&self, now: Instant) -> usize {
        let timeout = self.config.idle_timeout;
        let mut sessions = self.sessions.write().unwrap();
        let before = sessions.len();
        sessions.retain(|_, h| now.saturating_duration_since(*h.last_used.lock().unwrap()) <= timeout);
        before - sessions.len()
    }

    /// Periodically evicts idle sessions until the runtime shuts down.
    pub fn spawn_evictor(&self) -> tokio::task::JoinHandle<()> {
        let state = self.clone();
        let period = (self.config.idle_timeout / 10).max(Duration::from_secs(1));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                let n = state.evict_idle(Instant::now());
                if n > 0 {
                    info!("evicted {n} idle sessions");
                }
            }
        })
    }

    fn handle(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::new(ErrorKind::NotFound, format!("unknown session {id}")).into())
    }

    fn insert(&self, snapshot: Snapshot) -> String {
        let id = format!("{:032x}", rand::rng().random::<u128>());
        let handle = SessionHandle {
            writer: tokio::sync::Mutex::new(()),
            current: RwLock::new(Arc::new(snapshot)),
            last_used: Mutex::new(Instant::now()),
        };
        self.sessions.write().unwrap().insert(id.clone(), Arc::new(handle));
        id
    }

    async fn mutate(&self, id: &str, action: Action) -> Result<Arc<Snapshot>, ApiError> {
        let handle = self.handle(id)?;
        let _writer = handle.writer.lock().await;
        let current = handle.snapshot();
        let next = blocking(move || current.apply(&action)).await?;
        let next = Arc::new(next);
        *handle.current.write().unwrap() = Arc::clone(&next);
        Ok(next)
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::new(ErrorKind::Internal, e.to_string())))?
        .map_err(ApiError)
}

#[derive(Debug)]
pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl From<linehue::Error> for ApiError {
    fn from(e: linehue::Error) -> Self {
        ApiError(e.into())
    }
}

pub fn status_of(kind: ErrorKind) -> StatusCode {
    match kind {
        ErrorKind::NotFound => StatusCode::NOT_FOUND,
        ErrorKind::Conflict => StatusCode::CONFLICT,
        ErrorKind::Unprocessable => StatusCode::UNPROCESSABLE_ENTITY,
        ErrorKind::TooLarge => StatusCode::PAYLOAD_TOO_LARGE,
        ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.0.message, "hint": self.0.hint });
        (status_of(self.0.kind), Json(body)).into_response()
    }
}

#[derive(Serialize)]
pub struct SessionResponse {
    pub id: String,
    pub revision: u64,
    #[serde(flatten)]
    pub state: StateView,
}

fn session_response(id: &str, s: &Snapshot) -> Json<SessionResponse> {
    Json(SessionResponse { id: id.to_string(), revision: s.revision, state: s.state() })
}

pub fn router(state: AppState) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/spec", get(|| async { Json(openapi_spec()) }))
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", axum::routing::delete(delete_session))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/params", post(post_params))
        .route("/sessions/{id}/preprocess", post(post_preprocess))
        .route("/sessions/{id}/clusters/{cid}/split", post(post_split))
        .route("/sessions/{id}/hues", post(post_hue))
        .route("/sessions/{id}/template", post(post_template))
        .route("/sessions/{id}/render", get(get_render))
        .route("/sessions/{id}/lines", get(get_lines))
        .route("/sessions/{id}/assignment", get(get_assignment))
        .layer(DefaultBodyLimit::max(limit))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// JSON form of a session upload. Exactly one of `data` and `synth`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Dataset text: long-format trajectory CSV, wide time-series CSV, or the
    /// JSON line format.
    pub data: Option<String>,
    pub kind: Option<LineKind>,
    pub synth: Option<SynthParams>,
    pub seed: Option<u64>,
    pub config: Option<PipelineConfig>,
}

#[derive(Debug, Default, Deserialize)]
pub struct UploadQuery {
    pub kind: Option<LineKind>,
}

fn unprocessable(message: impl Into<String>) -> ApiError {
    ApiError(ServiceError::new(ErrorKind::Unprocessable, message))
}

fn parse_dataset(text: &str, kind: LineKind) -> Result<Dataset, ServiceError> {
    let parsed = match kind {
        LineKind::Trajectory => parse_trajectories(text),
        LineKind::Timeseries => parse_timeseries(text),
    }?;
    Ok(parsed.into())
}

fn is_json(headers: &HeaderMap) -> bool {
    headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).is_some_and(|v| v.starts_with("application/json"))
}

async fn create_session(
    State(state): State<AppState>,
    Query(query): Query<UploadQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionResponse>), ApiError> {
    let text = String::from_utf8(body.to_vec()).map_err(|_| unprocessable("payload is not UTF-8 text"))?;
    let mut request = CreateSession { data: Some(text.clone()), kind: query.kind, ..Default::default() };
    if is_json(&headers) {
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| unprocessable(format!("invalid JSON: {e}")))?;
        // A bare line document is a dataset; anything else is a request.
        if value.get("lines").is_none() {
            request = serde_json::from_value(value).map_err(|e| unprocessable(format!("invalid request: {e}")))?;
        }
    }
    let config = request.config.unwrap_or_else(|| state.config.defaults.clone());
    let snapshot = blocking(move || {
        let dataset = match (request.data, request.synth) {
            (Some(text), None) => parse_dataset(&text, request.kind.unwrap_or(LineKind::Trajectory))?,
            (None, Some(params)) => {
                let generated = params.generate(request.seed.unwrap_or(config.seed))?;
                let ids = (0..generated.lineset.len()).map(|i| i.to_string()).collect();
                Dataset { lineset: generated.lineset, original_ids: ids }
            }
            _ => return Err(ServiceError::new(ErrorKind::Unprocessable, "give exactly one of `data` and `synth`")),
        };
        Snapshot::create(dataset, config)
    })
    .await?;
    let id = state.insert(snapshot);
    let snap = state.snapshot(&id).expect("just inserted");
    info!("created session {id} with {} lines", snap.dataset.lineset.len());
    Ok((StatusCode::CREATED, session_response(&id, &snap)))
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    state.handle(&id)?;
    state.sessions.write().unwrap().remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

async fn get_state(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionResponse>, ApiError> {
    let snap = state.handle(&id)?.snapshot();
    Ok(session_response(&id, &snap))
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| unprocessable(format!("invalid request body: {e}")))
}

async fn post_params(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SessionResponse>, ApiError> {
    let update: ParamsUpdate = parse_body(&body)?;
    let snap = state.mutate(&id, Action::Params(update)).await?;
    Ok(session_response(&id, &snap))
}

async fn post_preprocess(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SessionResponse>, ApiError> {
    let request: PreprocessRequest = parse_body(&body)?;
    let snap = state.mutate(&id, Action::Preprocess(request)).await?;
    Ok(session_response(&id, &snap))
}

async fn post_split(
    State(state): State<AppState>,
    Path((id, cid)): Path<(String, usize)>,
) -> Result<Json<SessionResponse>, ApiError> {
    let snap = state.mutate(&id, Action::Split { cluster: cid }).await?;
    Ok(session_response(&id, &snap))
}

async fn post_hue(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SessionResponse>, ApiError> {
    let update: HueUpdate = parse_body(&body)?;
    let snap = state.mutate(&id, Action::Hue(update)).await?;
    Ok(session_response(&id, &snap))
}

async fn post_template(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SessionResponse>, ApiError> {
    let request: TemplateRequest = parse_body(&body)?;
    let snap = state.mutate(&id, Action::Template(request)).await?;
    Ok(session_response(&id, &snap))
}

#[derive(Debug, Default, Deserialize)]
pub struct RenderQuery {
    pub scale: Option<u32>,
}

fn render_options(snap: &Snapshot, scale: Option<u32>) -> Result<RenderOptions, ApiError> {
    let scale = scale.unwrap_or(snap.config.scale);
    if !(1..=MAX_RENDER_SCALE).contains(&scale) {
        return Err(unprocessable(format!("scale must be in 1..={MAX_RENDER_SCALE}")));
    }
    Ok(RenderOptions { scale, log_scale: snap.view.log_scale, ramp: snap.config.ramp })
}

fn png_response(png: Vec<u8>, revision: u64) -> Response {
    ([(header::CONTENT_TYPE, "image/png".to_string()), (header::ETAG, format!("\"{revision}\""))], png).into_response()
}

async fn get_render(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RenderQuery>,
) -> Result<Response, ApiError> {
    let snap = state.handle(&id)?.snapshot();
    let opts = render_options(&snap, q.scale)?;
    let revision = snap.revision;
    let png = blocking(move || Ok(render(&snap.prepared, &snap.derived, &opts).to_png()?)).await?;
    Ok(png_response(png, revision))
}

#[derive(Debug, Default, Deserialize)]
pub struct LinesQuery {
    /// Cluster index, or `none` for unassigned lines.
    pub cluster: String,
    /// `json` (default) or `png`.
    pub format: Option<String>,
    pub scale: Option<u32>,
}

#[derive(Serialize)]
struct LineGeometry {
    id: u32,
    original_id: String,
    points: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct LinesResponse {
    revision: u64,
    cluster: Option<u32>,
    count: usize,
    lines: Vec<LineGeometry>,
}

async fn get_lines(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<LinesQuery>,
) -> Result<Response, ApiError> {
    let snap = state.handle(&id)?.snapshot();
    let cluster = match q.cluster.trim() {
        c if c.eq_ignore_ascii_case("none") => None,
        c => {
            let cid: u32 =
                c.parse().map_err(|_| unprocessable(format!("cluster must be an index or `none`, got {c:?}")))?;
            if cid as usize >= snap.derived.clustering.k {
                return Err(ServiceError::new(ErrorKind::NotFound, format!("unknown cluster {cid}")).into());
            }
            Some(cid)
        }
    };
    match q.format.as_deref().unwrap_or("json") {
        "json" => {
            let ls = &snap.dataset.lineset;
            let lines: Vec<LineGeometry> = snap
                .derived
                .lines
                .lines_in(cluster)
                .into_iter()
                .map(|i| {
                    let line = &ls.lines()[i as usize];
                    LineGeometry {
                        id: i,
                        original_id: snap
                            .dataset
                            .original_ids
                            .get(i as usize)
                            .cloned()
                            .unwrap_or_else(|| i.to_string()),
                        points: line.vertices.iter().map(|p| [p.x, p.y]).collect(),
                    }
                })
                .collect();
            let body = LinesResponse { revision: snap.revision, cluster, count: lines.len(), lines };
            Ok(Json(body).into_response())
        }
        "png" => {
            let opts = render_options(&snap, q.scale)?;
            let revision = snap.revision;
            let png = blocking(move || {
                let img =
                    render_lines_of(&snap.dataset.lineset, &snap.prepared, &snap.derived, &snap.view, cluster, &opts);
                Ok(img.to_png()?)
            })
            .await?;
            Ok(png_response(png, revision))
        }
        other => Err(unprocessable(format!("format must be json or png, got {other:?}"))),
    }
}

async fn get_assignment(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let snap = state.handle(&id)?.snapshot();
    let ids = &snap.dataset.original_ids;
    let csv = snap.derived.lines.to_csv((!ids.is_empty()).then_some(&ids[..]));
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}
