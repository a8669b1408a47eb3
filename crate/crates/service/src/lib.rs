//! HTTP facade and job runner over the generation pipeline.
//!
//! Grids live in a content-addressed store with an append-only journal;
//! long operations run as jobs on a fixed pool of worker threads that share
//! one read-only set of checkpoints.

pub mod jobs;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use arch_core::dataprep::{filter_parts, grid_origin, parse_obj, voxelize, Cube, SynthConfig};
use arch_core::pipeline::Models;
use arch_core::voxcore::{decode_vxg1, VoxelGrid, VXG1_MAGIC};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use jobs::{JobSpec, Rejection};
use store::{Job, JobState, Lineage, ModelEntry, Store, StoreError};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_MAX_UPLOAD: usize = 64 << 20;
/// Resolution OBJ uploads are voxelized at.
pub const OBJ_RESOLUTION: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub ckpt_dir: PathBuf,
    pub workers: usize,
    pub port: u16,
    pub max_upload_bytes: usize,
    /// Allowed CORS origin; `None` allows any.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: PathBuf::from("data"),
            ckpt_dir: PathBuf::from("checkpoints"),
            workers: 1,
            port: DEFAULT_PORT,
            max_upload_bytes: DEFAULT_MAX_UPLOAD,
            cors_origin: None,
        }
    }
}

impl ServiceConfig {
    /// Read `ARCH_DATA_DIR`, `ARCH_CKPT_DIR`, `ARCH_WORKERS`, `ARCH_PORT`,
    /// `ARCH_MAX_UPLOAD` (bytes) and `ARCH_CORS_ORIGIN` through `var`.
    pub fn from_vars(var: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let mut c = ServiceConfig::default();
        fn num<T: std::str::FromStr>(name: &str, v: &str) -> Result<T, String> {
            v.trim().parse().map_err(|_| format!("{name}: cannot parse `{v}`"))
        }
        if let Some(v) = var("ARCH_DATA_DIR") {
            c.data_dir = v.into();
        }
        if let Some(v) = var("ARCH_CKPT_DIR") {
            c.ckpt_dir = v.into();
        }
        if let Some(v) = var("ARCH_WORKERS") {
            c.workers = num("ARCH_WORKERS", &v)?;
            if c.workers == 0 {
                return Err("ARCH_WORKERS must be at least 1".into());
            }
        }
        if let Some(v) = var("ARCH_PORT") {
            c.port = num("ARCH_PORT", &v)?;
        }
        if let Some(v) = var("ARCH_MAX_UPLOAD") {
            c.max_upload_bytes = num("ARCH_MAX_UPLOAD", &v)?;
        }
        c.cors_origin = var("ARCH_CORS_ORIGIN").filter(|s| !s.is_empty());
        Ok(c)
    }

    pub fn from_env() -> Result<Self, String> {
        Self::from_vars(|k| std::env::var(k).ok())
    }
}

pub struct AppState {
    pub store: Store,
    pub models: Arc<Models>,
    queue: Mutex<Sender<String>>,
    max_upload_bytes: usize,
    cors_origin: Option<String>,
}

/// A running store, worker pool and router.
pub struct Service {
    pub state: Arc<AppState>,
    workers: Vec<JoinHandle<()>>,
}

impl Service {
    /// Open the store, start `config.workers` workers and re-queue every job
    /// the journal left unfinished. Zero workers leaves jobs queued.
    pub fn start(config: &ServiceConfig, models: Models) -> Result<Service, StoreError> {
        let (store, pending) = Store::open(&config.data_dir)?;
        let (tx, rx) = channel::<String>();
        let state = Arc::new(AppState {
            store,
            models: Arc::new(models),
            queue: Mutex::new(tx),
            max_upload_bytes: config.max_upload_bytes,
            cors_origin: config.cors_origin.clone(),
        });
        let rx = Arc::new(Mutex::new(rx));
        let workers = (0..config.workers)
            .map(|i| {
                let (state, rx) = (Arc::downgrade(&state), rx.clone());
                std::thread::Builder::new().name(format!("arch-worker-{i}")).spawn(move || worker(state, rx)).expect("spawn worker")
            })
            .collect();
        for id in pending {
            log::info!("re-queueing job {id}");
            state.enqueue(id);
        }
        Ok(Service { state, workers })
    }

    pub fn router(&self) -> Router {
        router(self.state.clone())
    }

    /// Drop the queue and wait for workers to finish their current job.
    pub fn shutdown(self) {
        let Service { state, workers } = self;
        drop(state);
        for w in workers {
            let _ = w.join();
        }
    }
}

impl AppState {
    fn enqueue(&self, id: String) {
        let _ = self.queue.lock().unwrap_or_else(|p| p.into_inner()).send(id);
    }
}

fn worker(state: std::sync::Weak<AppState>, rx: Arc<Mutex<Receiver<String>>>) {
    loop {
        let next = rx.lock().unwrap_or_else(|p| p.into_inner()).recv_timeout(std::time::Duration::from_millis(200));
        let id = match next {
            Ok(id) => id,
            Err(std::sync::mpsc::RecvTimeoutError::Timeout) if state.strong_count() > 0 => continue,
            Err(_) => return,
        };
        let Some(state) = state.upgrade() else { return };
        execute(&state, &id);
    }
}

fn execute(state: &AppState, id: &str) {
    let job = match state.store.transition(id, JobState::Running, |_| ()) {
        Ok(j) => j,
        Err(e) => {
            log::warn!("job {id} not runnable: {e}");
            return;
        }
    };
    log::info!("job {id} ({}) running", kind_name(&job.spec));
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        jobs::run(id, &job.spec, &state.store, &state.models, &mut |f| state.store.set_progress(id, f))
    }));
    let done = match outcome {
        Ok(Ok(out)) => state.store.transition(id, JobState::Done, |j| {
            j.result_ids = out.result_ids;
            j.result = out.result;
        }),
        Ok(Err(e)) => state.store.transition(id, JobState::Failed, |j| j.error = Some(e.to_string())),
        Err(p) => {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            state.store.transition(id, JobState::Failed, |j| j.error = Some(format!("panic: {}", msg.unwrap_or_default())))
        }
    };
    match done {
        Ok(j) => log::info!("job {id} {:?}", j.state),
        Err(e) => log::error!("job {id}: {e}"),
    }
}

pub fn kind_name(spec: &JobSpec) -> &'static str {
    match spec {
        JobSpec::Generate(_) => "generate",
        JobSpec::Complete(_) => "complete",
        JobSpec::PlanComplete(_) => "plan_complete",
        JobSpec::Interpolate(_) => "interpolate",
        JobSpec::Vary(_) => "vary",
        JobSpec::Detailise(_) => "detailise",
        JobSpec::Metrics(_) => "metrics",
    }
}

/// JSON error body with a status code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: &self.message })).into_response()
    }
}

impl From<Rejection> for ApiError {
    fn from(r: Rejection) -> Self {
        let status = match r {
            Rejection::UnknownModel(_) => StatusCode::NOT_FOUND,
            Rejection::MissingCheckpoint(_) => StatusCode::CONFLICT,
            Rejection::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, r.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Unknown(id) => ApiError::new(StatusCode::NOT_FOUND, format!("unknown id {id}")),
            e => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match state.cors_origin.as_deref().and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(origin) => cors.allow_origin(AllowOrigin::exact(origin)),
        None => cors.allow_origin(Any),
    };
    let limit = state.max_upload_bytes;
    Router::new()
        .route("/health", get(health))
        .route("/models", post(upload).get(list_models).layer(DefaultBodyLimit::max(limit)))
        .route("/models/{id}", get(get_model))
        .route("/models/{id}/voxels", get(get_voxels))
        .route("/jobs", post(submit).get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .layer(cors)
        .with_state(state)
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    resolution: Option<usize>,
    prior: bool,
    upsampler_levels: usize,
}

async fn health(State(s): State<Arc<AppState>>) -> Json<Health> {
    let m = &s.models;
    Json(Health { status: "ok", resolution: m.resolution(), prior: m.prior().is_ok(), upsampler_levels: m.available_levels() })
}

/// Parse an upload: VXG1 bytes, or OBJ text voxelized onto the stage-1 frame.
pub fn parse_upload(content_type: Option<&str>, body: &[u8]) -> Result<(VoxelGrid, &'static str), String> {
    let obj_type = matches!(content_type.map(|c| c.split(';').next().unwrap_or("").trim()), Some("model/obj" | "text/plain"));
    if !obj_type && (body.starts_with(VXG1_MAGIC) || content_type.is_some()) {
        return decode_vxg1(body).map(|g| (g, "upload")).map_err(|e| format!("bad VXG1: {e}"));
    }
    let text = std::str::from_utf8(body).map_err(|_| "payload is neither VXG1 nor UTF-8 OBJ text".to_string())?;
    let mesh = parse_obj(text).map_err(|e| format!("bad OBJ: {e}"))?;
    let mesh = filter_parts(&mesh);
    if mesh.is_empty() {
        return Err("OBJ has no faces after part filtering".into());
    }
    let vs = SynthConfig::default().voxel_size;
    let min = grid_origin(OBJ_RESOLUTION, vs);
    let grid = voxelize(&mesh, OBJ_RESOLUTION, Cube { min, edge: OBJ_RESOLUTION as f64 * vs }).grid;
    let origin = [min[0] as f32, min[1] as f32, min[2] as f32];
    Ok((grid.with_geometry(vs as f32, origin), "upload_obj"))
}

async fn upload(State(s): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<(StatusCode, Json<ModelEntry>), ApiError> {
    let ct = headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).map(str::to_string);
    let state = s.clone();
    let entry = tokio::task::spawn_blocking(move || {
        let (grid, op) = parse_upload(ct.as_deref(), &body).map_err(|m| ApiError::new(StatusCode::BAD_REQUEST, m))?;
        let lineage = Lineage { parents: vec![], operation: op.into(), job_id: None };
        Ok::<_, ApiError>(state.store.put_grid(&grid, None, Some(lineage))?)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(entry)))
}

async fn list_models(State(s): State<Arc<AppState>>) -> Json<Vec<ModelEntry>> {
    Json(s.store.models())
}

async fn get_model(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<ModelEntry>, ApiError> {
    s.store.model(&id).map(Json).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown model {id}")))
}

async fn get_voxels(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let entry = s.store.model(&id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown model {id}")))?;
    let bytes = tokio::fs::read(s.store.root().join(&entry.path))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

async fn submit(State(s): State<Arc<AppState>>, Json(spec): Json<JobSpec>) -> Result<(StatusCode, Json<Job>), ApiError> {
    jobs::admit(&spec, &s.store, &s.models)?;
    let job = s.store.insert_job(spec)?;
    s.enqueue(job.id.clone());
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn list_jobs(State(s): State<Arc<AppState>>) -> Json<Vec<Job>> {
    Json(s.store.jobs())
}

async fn get_job(State(s): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Job>, ApiError> {
    s.store.job(&id).map(Json).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown job {id}")))
}

/// Load checkpoints, start the pool and serve until interrupted.
pub async fn serve(config: ServiceConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let models = Models::load(&config.ckpt_dir)?;
    log::info!(
        "checkpoints from {}: tokenizer {:?}, prior {}, upsampler levels {}",
        config.ckpt_dir.display(),
        models.resolution(),
        models.prior().is_ok(),
        models.available_levels()
    );
    let service = Service::start(&config, models)?;
    let app = service.router();
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {addr}");
    axum::serve(listener, app).with_graceful_shutdown(async { let _ = tokio::signal::ctrl_c().await; }).await?;
    Ok(())
}
