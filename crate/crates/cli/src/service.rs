//! HTTP/JSON service over a single session.
//!
//! Optimizations run as background jobs, one at a time; renders, residuals
//! and metrics are answered synchronously on the blocking pool so a running
//! job never holds them up.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tfopt::compare::{image_metrics_with, residual_field, MetricMode, ResidualVolume};
use tfopt::renderer::{render, render_residual, CameraSpec, ImageRGBA, RenderConfig};
use tfopt::solvers::SolveReport;
use tfopt::volcore::io::{self, tf_from_json, tf_to_json, VolumeHeader};
use tfopt::volcore::{histogram, ScalarVolume, TransferFunction};

use crate::error::{AppError, AppResult, ErrorKind};
use crate::pipeline::{self, OptimizeInputs, OptimizeParams, SolverChoice};

/// Largest image edge served over HTTP.
pub const MAX_RENDER_SIZE: usize = 1024;

const BODY_LIMIT: usize = 1 << 30;
const DEFAULT_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobResult {
    pub tf: String,
    pub tf_path: PathBuf,
    pub report_path: PathBuf,
    pub report: SolveReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub id: u64,
    pub state: JobState,
    pub progress: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<JobResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<AppError>,
}

impl JobStatus {
    /// States only move forward.
    fn advance(&mut self, state: JobState) {
        debug_assert!(state >= self.state);
        self.state = self.state.max(state);
    }

    fn active(&self) -> bool {
        matches!(self.state, JobState::Queued | JobState::Running)
    }
}

pub struct Session {
    pub id: String,
    pub volumes: BTreeMap<String, Arc<ScalarVolume>>,
    /// Residual fields, rendered without renormalization.
    pub residuals: BTreeMap<String, Arc<ResidualVolume>>,
    pub tfs: BTreeMap<String, Arc<TransferFunction>>,
    pub reports: BTreeMap<String, SolveReport>,
    pub camera: CameraSpec,
    pub seed: u64,
    pub jobs: BTreeMap<u64, JobStatus>,
    next_job: u64,
}

fn valid_name(name: &str) -> AppResult<&str> {
    let ok = !name.is_empty()
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(name)
    } else {
        Err(AppError::usage(format!("invalid name {name:?}")))
    }
}

fn json_files(dir: &Path) -> Vec<PathBuf> {
    let Ok(entries) = fs::read_dir(dir) else { return Vec::new() };
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    out
}

fn residual_from_volume(vol: &ScalarVolume) -> ResidualVolume {
    ResidualVolume {
        dims: vol.dims(),
        spacing: vol.spacing(),
        values: vol.data().iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect(),
        missing: vol.missing_mask(),
    }
}

impl Session {
    pub fn empty(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            volumes: BTreeMap::new(),
            residuals: BTreeMap::new(),
            tfs: BTreeMap::new(),
            reports: BTreeMap::new(),
            camera: CameraSpec::default(),
            seed: 0,
            jobs: BTreeMap::new(),
            next_job: 1,
        }
    }

    /// Registers the volumes and tables found in `data_dir`, its `volumes/`,
    /// `tfs/` and `residuals/` subdirectories. Files that are neither are skipped.
    pub fn load(data_dir: &Path) -> AppResult<Self> {
        if !data_dir.is_dir() {
            return Err(AppError::new(ErrorKind::Input, format!("data dir {} is not a directory", data_dir.display())));
        }
        let mut s = Self::empty(format!("{:x}", std::process::id()));
        for dir in [data_dir.to_path_buf(), data_dir.join("volumes"), data_dir.join("tfs"), data_dir.join("residuals")] {
            let residual = dir.ends_with("residuals");
            for path in json_files(&dir) {
                let Some(name) = path.file_stem().and_then(|n| n.to_str()).map(str::to_string) else { continue };
                if valid_name(&name).is_err() {
                    continue;
                }
                let Ok(text) = fs::read_to_string(&path) else { continue };
                if serde_json::from_str::<VolumeHeader>(&text).is_ok() {
                    if s.has_volume(&name) {
                        continue;
                    }
                    match io::read_volume(&path) {
                        Ok(v) if residual => {
                            s.residuals.insert(name, Arc::new(residual_from_volume(&v)));
                        }
                        Ok(v) => {
                            s.volumes.insert(name, Arc::new(v));
                        }
                        Err(e) => eprintln!("skipping {}: {e}", path.display()),
                    }
                } else if let Ok(tf) = tf_from_json(&text) {
                    s.tfs.entry(name).or_insert_with(|| Arc::new(tf));
                }
            }
        }
        Ok(s)
    }

    fn has_volume(&self, name: &str) -> bool {
        self.volumes.contains_key(name) || self.residuals.contains_key(name)
    }

    pub fn volume(&self, name: &str) -> AppResult<Arc<ScalarVolume>> {
        self.volumes.get(name).cloned().ok_or_else(|| AppError::not_found("volume", name))
    }

    pub fn tf(&self, name: &str) -> AppResult<Arc<TransferFunction>> {
        self.tfs.get(name).cloned().ok_or_else(|| AppError::not_found("transfer function", name))
    }
}

struct Shared {
    data_dir: PathBuf,
    session: Mutex<Session>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(data_dir: impl Into<PathBuf>, session: Session) -> Self {
        Self(Arc::new(Shared { data_dir: data_dir.into(), session: Mutex::new(session) }))
    }

    pub fn load(data_dir: impl Into<PathBuf>) -> AppResult<Self> {
        let data_dir = data_dir.into();
        let session = Session::load(&data_dir)?;
        Ok(Self::new(data_dir, session))
    }

    pub fn data_dir(&self) -> &Path {
        &self.0.data_dir
    }

    pub fn session(&self) -> MutexGuard<'_, Session> {
        self.0.session.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, [(header::CONTENT_TYPE, "application/json")], self.to_json()).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> AppResult<T> {
    serde_json::from_slice(body).map_err(|e| AppError::new(ErrorKind::Input, format!("invalid payload: {e}")))
}

fn json_text(status: StatusCode, text: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> AppResult<T> + Send + 'static) -> AppResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| AppError::new(ErrorKind::Solver, format!("worker panicked: {e}")))?
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/session", get(get_session).put(put_session))
        .route("/api/volumes", get(list_volumes).post(upload_volume))
        .route("/api/tf/{name}", get(get_tf).put(put_tf))
        .route("/api/histogram/{volume}", get(get_histogram))
        .route("/api/render", post(post_render))
        .route("/api/residual", post(post_residual))
        .route("/api/optimize", post(post_optimize))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/metrics", post(post_metrics))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

pub async fn serve(addr: std::net::SocketAddr, data_dir: PathBuf) -> AppResult<()> {
    let state = AppState::load(data_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Serialize)]
struct SessionInfo {
    id: String,
    seed: u64,
    camera: CameraSpec,
    volumes: Vec<String>,
    tfs: Vec<String>,
    jobs: Vec<u64>,
}

async fn get_session(State(st): State<AppState>) -> Json<impl Serialize> {
    let s = st.session();
    Json(SessionInfo {
        id: s.id.clone(),
        seed: s.seed,
        camera: s.camera.clone(),
        volumes: s.volumes.keys().chain(s.residuals.keys()).cloned().collect(),
        tfs: s.tfs.keys().cloned().collect(),
        jobs: s.jobs.keys().copied().collect(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionUpdate {
    seed: Option<u64>,
    camera: Option<CameraSpec>,
}

async fn put_session(State(st): State<AppState>, body: Bytes) -> AppResult<Json<impl Serialize>> {
    let upd: SessionUpdate = parse(&body)?;
    if let Some(cam) = &upd.camera {
        check_size(cam)?;
        cam.resolve([1.0; 3])?;
    }
    {
        let mut s = st.session();
        if let Some(seed) = upd.seed {
            s.seed = seed;
        }
        if let Some(cam) = upd.camera {
            s.camera = cam;
        }
    }
    Ok(get_session(State(st)).await)
}

#[derive(Serialize)]
struct VolumeInfo {
    name: String,
    dims: [usize; 3],
    spacing: [f64; 3],
    range: [f64; 2],
    residual: bool,
}

fn volume_info(name: &str, vol: &ScalarVolume, residual: bool) -> VolumeInfo {
    VolumeInfo { name: name.to_string(), dims: vol.dims(), spacing: vol.spacing(), range: [vol.vmin(), vol.vmax()], residual }
}

async fn list_volumes(State(st): State<AppState>) -> AppResult<Json<Vec<VolumeInfo>>> {
    let s = st.session();
    let mut out: Vec<VolumeInfo> = s.volumes.iter().map(|(n, v)| volume_info(n, v, false)).collect();
    for (n, r) in &s.residuals {
        out.push(volume_info(n, &r.to_volume()?, true));
    }
    Ok(Json(out))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VolumeUpload {
    name: String,
    dims: [usize; 3],
    spacing: [f64; 3],
    /// Base64 of little-endian `f32` samples, x fastest.
    data: String,
}

async fn upload_volume(State(st): State<AppState>, body: Bytes) -> AppResult<Response> {
    let up: VolumeUpload = parse(&body)?;
    valid_name(&up.name)?;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(up.data.as_bytes())
        .map_err(|e| AppError::usage(format!("data is not base64: {e}")))?;
    let header = VolumeHeader {
        dims: up.dims,
        spacing: up.spacing,
        dtype: "f32".into(),
        byte_order: "little".into(),
        data_file: format!("{}.raw", up.name),
    };
    let vol = io::volume_from_bytes(&header, &bytes)?;
    if st.session().has_volume(&up.name) {
        return Err(AppError::new(ErrorKind::Conflict, format!("volume {:?} already exists", up.name)));
    }
    let dir = st.data_dir().join("volumes");
    fs::create_dir_all(&dir)?;
    io::write_volume(dir.join(format!("{}.json", up.name)), &vol)?;
    let info = volume_info(&up.name, &vol, false);
    let mut s = st.session();
    if s.has_volume(&up.name) {
        return Err(AppError::new(ErrorKind::Conflict, format!("volume {:?} already exists", up.name)));
    }
    s.volumes.insert(up.name, Arc::new(vol));
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn get_tf(State(st): State<AppState>, UrlPath(name): UrlPath<String>) -> AppResult<Response> {
    let tf = st.session().tf(&name)?;
    Ok(json_text(StatusCode::OK, tf_to_json(&tf)))
}

async fn put_tf(State(st): State<AppState>, UrlPath(name): UrlPath<String>, body: Bytes) -> AppResult<Response> {
    valid_name(&name)?;
    let text = std::str::from_utf8(&body).map_err(|_| AppError::usage("body is not UTF-8"))?;
    let tf = tf_from_json(text).map_err(|e| AppError::usage(format!("invalid transfer function: {e}")))?;
    store_tf(st.data_dir(), &name, &tf)?;
    let n_t = tf.len();
    st.session().tfs.insert(name.clone(), Arc::new(tf));
    Ok(Json(serde_json::json!({ "name": name, "n_t": n_t })).into_response())
}

fn store_tf(data_dir: &Path, name: &str, tf: &TransferFunction) -> AppResult<()> {
    let dir = data_dir.join("tfs");
    fs::create_dir_all(&dir)?;
    io::write_tf(dir.join(format!("{name}.json")), tf)?;
    Ok(())
}

async fn get_histogram(
    State(st): State<AppState>,
    UrlPath(name): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
) -> AppResult<Response> {
    let bins = match q.get("bins") {
        Some(b) => b.parse::<usize>().map_err(|_| AppError::usage(format!("bins must be a positive integer, got {b:?}")))?,
        None => DEFAULT_BINS,
    };
    let vol = {
        let s = st.session();
        match s.residuals.get(&name) {
            Some(r) => Arc::new(r.to_volume()?),
            None => s.volume(&name)?,
        }
    };
    let h = histogram(&vol, bins)?;
    Ok(Json(h).into_response())
}

fn check_size(cam: &CameraSpec) -> AppResult<()> {
    let (w, h) = cam.size();
    if w > MAX_RENDER_SIZE || h > MAX_RENDER_SIZE {
        return Err(AppError::usage(format!("image {w}x{h} exceeds {MAX_RENDER_SIZE}x{MAX_RENDER_SIZE}")));
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderRequest {
    volume: String,
    tf: String,
    camera: Option<CameraSpec>,
    #[serde(default)]
    config: RenderConfig,
}

enum Renderable {
    Volume(Arc<ScalarVolume>),
    Residual(Arc<ResidualVolume>),
}

async fn post_render(State(st): State<AppState>, body: Bytes) -> AppResult<Response> {
    let req: RenderRequest = parse(&body)?;
    let (target, tf, camera) = {
        let s = st.session();
        let target = match s.residuals.get(&req.volume) {
            Some(r) => Renderable::Residual(r.clone()),
            None => Renderable::Volume(s.volume(&req.volume)?),
        };
        (target, s.tf(&req.tf)?, req.camera.unwrap_or_else(|| s.camera.clone()))
    };
    check_size(&camera)?;
    let png = blocking(move || {
        let img = match target {
            Renderable::Volume(v) => render(&v, &tf, &camera.resolve(v.extent())?, &req.config)?,
            Renderable::Residual(r) => {
                let cam = camera.resolve(r.to_volume()?.extent())?;
                render_residual(&r, &cam, &req.config, &tf)?
            }
        };
        Ok(img.to_png()?)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResidualRequest {
    #[serde(rename = "ref")]
    reference: String,
    ref_tf: String,
    opt: String,
    opt_tf: String,
    name: Option<String>,
}

async fn post_residual(State(st): State<AppState>, body: Bytes) -> AppResult<Response> {
    let req: ResidualRequest = parse(&body)?;
    let name = req.name.clone().unwrap_or_else(|| format!("residual_{}_{}", req.reference, req.opt));
    valid_name(&name)?;
    let (vr, tr, vo, to) = {
        let s = st.session();
        if s.volumes.contains_key(&name) {
            return Err(AppError::new(ErrorKind::Conflict, format!("volume {name:?} already exists")));
        }
        (s.volume(&req.reference)?, s.tf(&req.ref_tf)?, s.volume(&req.opt)?, s.tf(&req.opt_tf)?)
    };
    let res = blocking(move || Ok(residual_field(&vr, &tr, &vo, &to)?)).await?;
    let dir = st.data_dir().join("residuals");
    fs::create_dir_all(&dir)?;
    pipeline::write_residual(&dir.join(format!("{name}.json")), &res)?;
    let (max, mean) = (res.max(), res.mean());
    st.session().residuals.insert(name.clone(), Arc::new(res));
    Ok(Json(serde_json::json!({ "name": name, "max": max, "mean": mean })).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizeRequest {
    solver: String,
    #[serde(rename = "ref")]
    reference: String,
    ref_tf: String,
    opt: String,
    tf_init: Option<String>,
    #[serde(default)]
    params: OptimizeParams,
    seed: Option<u64>,
    /// Name for the resulting table, `opt_<job id>` by default.
    name: Option<String>,
}

async fn post_optimize(State(st): State<AppState>, body: Bytes) -> AppResult<Response> {
    let req: OptimizeRequest = parse(&body)?;
    let solver = SolverChoice::parse(&req.solver)?;
    if let Some(n) = &req.name {
        valid_name(n)?;
    }
    let (id, vr, tr, vo, init, seed) = {
        let mut s = st.session();
        let inputs = (s.volume(&req.reference)?, s.tf(&req.ref_tf)?, s.volume(&req.opt)?);
        let init = req.tf_init.as_deref().map(|n| s.tf(n)).transpose()?;
        if let Some(active) = s.jobs.values().find(|j| j.active()) {
            return Err(AppError::new(ErrorKind::Conflict, format!("job {} is still {:?}", active.id, active.state)));
        }
        let id = s.next_job;
        s.next_job += 1;
        s.jobs.insert(id, JobStatus { id, state: JobState::Queued, progress: 0.0, result: None, error: None });
        (id, inputs.0, inputs.1, inputs.2, init, req.seed.unwrap_or(s.seed))
    };
    let name = req.name.unwrap_or_else(|| format!("opt_{id}"));
    let params = req.params;
    let job_state = st.clone();
    tokio::task::spawn_blocking(move || {
        let st = job_state;
        let update = |f: &dyn Fn(&mut JobStatus)| {
            if let Some(j) = st.session().jobs.get_mut(&id) {
                f(j)
            }
        };
        update(&|j| j.advance(JobState::Running));
        let inputs = OptimizeInputs { vol_r: &vr, tf_r: &tr, vol_o: &vo, tf_init: init.as_deref() };
        let outcome = pipeline::run_optimize(&inputs, solver, &params, seed, |p| update(&|j| j.progress = p)).and_then(|report| {
            let arts = pipeline::write_artifacts(&st.data_dir().join("jobs").join(id.to_string()), &report)?;
            store_tf(st.data_dir(), &name, &report.solution)?;
            Ok((report, arts))
        });
        let mut s = st.session();
        match outcome {
            Ok((report, arts)) => {
                s.tfs.insert(name.clone(), Arc::new(report.solution.clone()));
                s.reports.insert(name.clone(), report.clone());
                if let Some(j) = s.jobs.get_mut(&id) {
                    j.progress = 1.0;
                    j.result = Some(JobResult { tf: name, tf_path: arts.tf, report_path: arts.report, report });
                    j.advance(JobState::Done);
                }
            }
            Err(e) => {
                if let Some(j) = s.jobs.get_mut(&id) {
                    j.error = Some(e);
                    j.advance(JobState::Failed);
                }
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "job_id": id }))).into_response())
}

async fn get_job(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> AppResult<Json<JobStatus>> {
    let job = id.parse::<u64>().ok().and_then(|id| st.session().jobs.get(&id).cloned());
    job.map(Json).ok_or_else(|| AppError::not_found("job", &id))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsRequest {
    /// Base64 PNG.
    image_a: String,
    image_b: String,
    #[serde(default)]
    mode: MetricMode,
}

fn decode_png(b64: &str, what: &str) -> AppResult<ImageRGBA> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64.as_bytes())
        .map_err(|e| AppError::usage(format!("{what} is not base64: {e}")))?;
    ImageRGBA::from_png(&bytes).map_err(|e| AppError::usage(format!("{what}: {e}")))
}

async fn post_metrics(body: Bytes) -> AppResult<Response> {
    let req: MetricsRequest = parse(&body)?;
    let report = blocking(move || {
        let a = decode_png(&req.image_a, "image_a")?;
        let b = decode_png(&req.image_b, "image_b")?;
        Ok(image_metrics_with(&a, &b, req.mode)?)
    })
    .await?;
    Ok(json_text(StatusCode::OK, pipeline::metrics_to_json(&report)))
}
