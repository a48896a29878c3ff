//! HTTP service over a single scene: state, renders, edits and jobs.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tokio::sync::oneshot;

use crate::edit::{apply_placement_edit, color_guidance, finetune_color, finetune_geometry, EditError, EditRequest};
use crate::field::{Field, FieldRegistry};
use crate::guidance::GuidanceHandle;
use crate::render::{render_composed, render_object, CameraSpec, Image, RenderError, RenderOptions, Sampling};
use crate::scene::{parse_scene, SceneDescription, SceneError, Violation};
use crate::train::{RunRecorder, TrainConfig, TrainError, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Train,
    FinetuneGeometry,
    FinetuneColor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub done: u64,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: Progress,
    pub latest_preview: Option<String>,
    pub error: Option<String>,
}

/// Scene and fields, always swapped together.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub scene: SceneDescription,
    pub fields: FieldRegistry<f32>,
}

struct Job {
    record: JobRecord,
    cancel: Arc<AtomicBool>,
}

struct Shared {
    snapshot: RwLock<Arc<Snapshot>>,
    jobs: Mutex<BTreeMap<String, Job>>,
    /// Held while mutating the scene or starting a job; names the running job.
    active: Mutex<Option<String>>,
    next_job: AtomicU64,
    base_dir: PathBuf,
    out_dir: PathBuf,
    guidance: GuidanceHandle,
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    Invalid(Vec<Violation>),
    NotFound(String),
    Conflict(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest(e) => (StatusCode::BAD_REQUEST, json!({ "error": e })),
            ApiError::Invalid(v) => (StatusCode::BAD_REQUEST, json!({ "error": "validation failed", "violations": v })),
            ApiError::NotFound(e) => (StatusCode::NOT_FOUND, json!({ "error": e })),
            ApiError::Conflict(e) => (StatusCode::CONFLICT, json!({ "error": e })),
            ApiError::Internal(e) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": e })),
        };
        (status, Json(body)).into_response()
    }
}

impl From<RenderError> for ApiError {
    fn from(e: RenderError) -> Self {
        match e {
            RenderError::UnknownField(id) => ApiError::NotFound(format!("unknown field '{id}'")),
            RenderError::InvalidCamera(_) | RenderError::InvalidOptions(_) | RenderError::ResolutionMismatch { .. } => {
                ApiError::BadRequest(e.to_string())
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<EditError> for ApiError {
    fn from(e: EditError) -> Self {
        match e {
            EditError::UnknownProxy(_) | EditError::UnknownField(_) => ApiError::NotFound(e.to_string()),
            EditError::Invalid(v) => ApiError::Invalid(v),
            EditError::DuplicateId(_) | EditError::NotTrainable(_) | EditError::Unbound(_) | EditError::Request(_) => {
                ApiError::BadRequest(e.to_string())
            }
            EditError::Guidance(g) => ApiError::BadRequest(g.to_string()),
            EditError::Train(TrainError::InvalidConfig(v)) => ApiError::BadRequest(v.join("; ")),
            EditError::Train(TrainError::InvalidScene(v)) => ApiError::Invalid(v),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed request body: {e}")))
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Handle to the service state; cheap to clone.
#[derive(Clone)]
pub struct Service {
    shared: Arc<Shared>,
}

impl Service {
    /// `base_dir` resolves relative paths in the scene; job outputs and
    /// render sidecars go under `out_dir`.
    pub fn new(
        scene: SceneDescription,
        fields: FieldRegistry<f32>,
        guidance: GuidanceHandle,
        base_dir: impl Into<PathBuf>,
        out_dir: impl AsRef<Path>,
    ) -> std::io::Result<Self> {
        std::fs::create_dir_all(out_dir.as_ref())?;
        let out_dir = std::path::absolute(out_dir.as_ref())?;
        Ok(Self {
            shared: Arc::new(Shared {
                snapshot: RwLock::new(Arc::new(Snapshot { scene, fields })),
                jobs: Mutex::new(BTreeMap::new()),
                active: Mutex::new(None),
                next_job: AtomicU64::new(1),
                base_dir: base_dir.into(),
                out_dir,
                guidance,
            }),
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.shared.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn swap(&self, snap: Snapshot) {
        *self.shared.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(snap);
    }

    pub fn job(&self, id: &str) -> Option<JobRecord> {
        lock(&self.shared.jobs).get(id).map(|j| j.record.clone())
    }

    /// Locks out jobs and other mutations; fails when a job is running.
    fn idle(&self) -> Result<MutexGuard<'_, Option<String>>, ApiError> {
        let active = lock(&self.shared.active);
        if let Some(id) = active.as_ref() {
            return Err(ApiError::Conflict(format!("training job {id} is running")));
        }
        Ok(active)
    }

    fn update_job(&self, id: &str, f: impl FnOnce(&mut JobRecord)) {
        if let Some(j) = lock(&self.shared.jobs).get_mut(id) {
            f(&mut j.record);
        }
    }

    /// Starts `work` on a dedicated thread. On success its snapshot replaces
    /// the current one; the final checkpoints are written under the job directory.
    fn spawn_job<F>(&self, kind: JobKind, config: TrainConfig, total: u64, work: F) -> Result<JobRecord, ApiError>
    where
        F: FnOnce(&Snapshot, &mut RunRecorder) -> Result<Option<Snapshot>, String> + Send + 'static,
    {
        let mut active = self.idle()?;
        let id = format!("job-{}", self.shared.next_job.fetch_add(1, Ordering::SeqCst));
        let dir = self.shared.out_dir.join("jobs").join(&id);
        let cancel = Arc::new(AtomicBool::new(false));
        let record = JobRecord {
            job_id: id.clone(),
            kind,
            state: JobState::Queued,
            progress: Progress { done: 0, total },
            latest_preview: None,
            error: None,
        };
        lock(&self.shared.jobs).insert(id.clone(), Job { record: record.clone(), cancel: cancel.clone() });
        *active = Some(id.clone());
        let snap = self.snapshot();
        let svc = self.clone();
        let job_id = id.clone();
        let spawned = std::thread::Builder::new().name(id.clone()).spawn(move || {
            svc.update_job(&job_id, |r| r.state = JobState::Running);
            let progress_svc = svc.clone();
            let progress_id = job_id.clone();
            let result = RunRecorder::create(&dir, &config)
                .map_err(|e| e.to_string())
                .map(|rec| {
                    rec.with_cancel(cancel.clone()).with_progress(move |e, preview| {
                        let preview = preview.map(|p| p.display().to_string());
                        progress_svc.update_job(&progress_id, |r| {
                            r.progress.done = e.iter;
                            if preview.is_some() {
                                r.latest_preview = preview;
                            }
                        });
                    })
                })
                .and_then(|mut rec| work(&snap, &mut rec))
                .and_then(|out| match out {
                    _ if cancel.load(Ordering::SeqCst) => Err("cancelled".to_owned()),
                    None => Err("cancelled".to_owned()),
                    Some(mut next) => {
                        let saved = next.fields.save_checkpoints(&dir.join("checkpoints")).map_err(|e| e.to_string())?;
                        for (fid, path) in saved {
                            if let Some(spec) = next.scene.fields.get_mut(&fid) {
                                spec.checkpoint = Some(path);
                            }
                        }
                        Ok(next)
                    }
                });
            // Hold the job lock across the swap so no edit slips in between.
            let mut active = lock(&svc.shared.active);
            match result {
                Ok(next) => {
                    svc.swap(next);
                    svc.update_job(&job_id, |r| {
                        r.state = JobState::Done;
                        r.progress.done = r.progress.total;
                    });
                }
                Err(e) => {
                    log::warn!("{job_id} failed: {e}");
                    svc.update_job(&job_id, |r| {
                        r.state = JobState::Failed;
                        r.error = Some(e);
                    });
                }
            }
            *active = None;
        });
        if let Err(e) = spawned {
            *active = None;
            self.update_job(&id, |r| {
                r.state = JobState::Failed;
                r.error = Some(e.to_string());
            });
            return Err(ApiError::Internal(e.to_string()));
        }
        Ok(record)
    }

    fn start_training(&self, config: TrainConfig) -> Result<JobRecord, ApiError> {
        let bad = config.violations();
        if !bad.is_empty() {
            return Err(ApiError::BadRequest(format!("invalid training config: {}", bad.join("; "))));
        }
        let guidance = self.shared.guidance.clone();
        let base = self.shared.base_dir.clone();
        let cfg = config.clone();
        self.spawn_job(JobKind::Train, config.clone(), config.total_iters, move |snap, rec| {
            let mut t = Trainer::new(snap.scene.clone(), snap.fields.clone(), cfg, guidance, &base)
                .map_err(|e| e.to_string())?;
            let summary = t.train(rec).map_err(|e| e.to_string())?;
            Ok((!summary.cancelled).then(|| Snapshot { scene: snap.scene.clone(), fields: t.into_fields() }))
        })
    }

    fn start_finetune(&self, edit: EditRequest) -> Result<JobRecord, ApiError> {
        let snap = self.snapshot();
        let base = self.shared.base_dir.clone();
        match edit {
            EditRequest::Geometry { proxy_id, shape, finetune } => {
                let field = snap.scene.proxy(&proxy_id).ok_or_else(|| ApiError::NotFound(format!("unknown proxy '{proxy_id}'")))?;
                if !matches!(snap.fields.get(&field.field), Some(Field::Neural(_))) {
                    return Err(ApiError::BadRequest(format!("field '{}' has no trainable parameters", field.field)));
                }
                shape.check().map_err(ApiError::BadRequest)?;
                let guidance = self.shared.guidance.clone();
                let cfg = finetune.clone();
                self.spawn_job(JobKind::FinetuneGeometry, finetune.clone(), finetune.total_iters, move |snap, rec| {
                    let out = finetune_geometry(&snap.scene, &snap.fields, &proxy_id, &shape, &cfg, guidance, &base, rec)
                        .map_err(|e| e.to_string())?;
                    Ok((!out.summary.cancelled).then_some(Snapshot { scene: out.scene, fields: out.fields }))
                })
            }
            EditRequest::Color { ref field_id, steps, ref finetune, .. } => {
                if snap.fields.get(field_id).is_none() {
                    return Err(ApiError::NotFound(format!("unknown field '{field_id}'")));
                }
                let guidance = color_guidance(&edit, finetune.render_resolution, Some(self.shared.guidance.clone()), &base)?;
                let (field_id, cfg) = (field_id.clone(), finetune.clone());
                self.spawn_job(JobKind::FinetuneColor, finetune.clone(), steps, move |snap, rec| {
                    let out = finetune_color(&snap.scene, &snap.fields, &field_id, steps, &cfg, guidance, rec)
                        .map_err(|e| e.to_string())?;
                    Ok((!out.summary.cancelled).then_some(Snapshot { scene: out.scene, fields: out.fields }))
                })
            }
            _ => Err(ApiError::BadRequest("not a fine-tuning edit".into())),
        }
    }

    /// Keeps loaded fields whose spec is unchanged; loads or initializes the rest.
    fn fields_for(&self, old: &Snapshot, scene: &SceneDescription) -> Result<FieldRegistry<f32>, ApiError> {
        let mut fresh = scene.clone();
        fresh.proxies.clear();
        fresh.fields.retain(|id, spec| old.scene.fields.get(id) != Some(spec) || old.fields.get(id).is_none());
        let mut loaded = FieldRegistry::load_for_scene(&fresh, &self.shared.base_dir)
            .map_err(|e| ApiError::BadRequest(e.to_string()))?;
        for id in scene.fields.keys() {
            if loaded.get(id).is_none() {
                if let Some(f) = old.fields.get(id) {
                    loaded.insert(id.clone(), f.clone());
                }
            }
        }
        Ok(loaded)
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/api/scene", get(get_scene).put(put_scene))
            .route("/api/edit", post(post_edit))
            .route("/api/render", post(post_render))
            .route("/api/render-object", post(post_render_object))
            .route("/api/renders/{name}", get(get_render_file))
            .route("/api/jobs/train", post(post_train))
            .route("/api/jobs/{id}", get(get_job))
            .route("/api/jobs/{id}/cancel", post(post_cancel))
            .route("/api/jobs/{id}/preview", get(get_job_preview))
            .route("/api/fields", get(get_fields))
            .with_state(self.clone())
    }
}

async fn get_scene(State(svc): State<Service>) -> Json<SceneDescription> {
    Json(svc.snapshot().scene.clone())
}

async fn put_scene(State(svc): State<Service>, body: Bytes) -> Result<Json<SceneDescription>, ApiError> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::BadRequest("body is not UTF-8".into()))?;
    let scene = match parse_scene(text, Path::new("request")) {
        Ok(s) => s,
        Err(SceneError::Invalid(v)) => return Err(ApiError::Invalid(v)),
        Err(e) => return Err(ApiError::BadRequest(e.to_string())),
    };
    let _guard = svc.idle()?;
    let fields = svc.fields_for(&svc.snapshot(), &scene)?;
    svc.swap(Snapshot { scene: scene.clone(), fields });
    Ok(Json(scene))
}

async fn post_edit(State(svc): State<Service>, body: Bytes) -> Result<Response, ApiError> {
    let edit: EditRequest = parse_body(&body)?;
    if edit.is_placement() {
        let _guard = svc.idle()?;
        let snap = svc.snapshot();
        let scene = apply_placement_edit(&snap.scene, &edit)?;
        svc.swap(Snapshot { scene: scene.clone(), fields: snap.fields.clone() });
        return Ok(Json(scene).into_response());
    }
    let rec = svc.start_finetune(edit)?;
    Ok((StatusCode::ACCEPTED, Json(rec)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderBody {
    camera: CameraSpec,
    #[serde(default)]
    resolution: Option<(usize, usize)>,
    #[serde(default)]
    n_samples: Option<usize>,
    #[serde(default)]
    sampling: Option<Sampling>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderObjectBody {
    field_id: String,
    camera: CameraSpec,
    #[serde(default)]
    resolution: Option<(usize, usize)>,
    #[serde(default)]
    n_samples: Option<usize>,
}

const DEFAULT_RESOLUTION: (usize, usize) = (64, 64);
const DEFAULT_SAMPLES: usize = 64;

fn png_response(bytes: Vec<u8>, opacity_ref: Option<String>) -> Response {
    let mut res = ([(header::CONTENT_TYPE, "image/png")], bytes).into_response();
    if let Some(r) = opacity_ref.and_then(|r| r.parse().ok()) {
        res.headers_mut().insert("x-opacity-pfm", r);
    }
    res
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn post_render(State(svc): State<Service>, body: Bytes) -> Result<Response, ApiError> {
    let req: RenderBody = parse_body(&body)?;
    let cam = req.camera.build(req.resolution, DEFAULT_RESOLUTION)?;
    let opts = RenderOptions { n_samples: req.n_samples.unwrap_or(DEFAULT_SAMPLES), sampling: req.sampling.unwrap_or(Sampling::Midpoint) };
    opts.validate()?;
    let snap = svc.snapshot();
    let dir = svc.shared.out_dir.join("renders");
    let (png, name) = blocking(move || {
        let img: Image<f32> = render_composed(&snap.scene, &snap.fields, &cam, &opts)?;
        let png = img.to_png_bytes().map_err(|e| ApiError::Internal(e.to_string()))?;
        let mut h = Sha256::new();
        h.update(&png);
        img.opacity.iter().for_each(|v| h.update(v.to_le_bytes()));
        let name: String = h.finalize()[..12].iter().map(|b| format!("{b:02x}")).collect::<String>() + ".pfm";
        let path = dir.join(&name);
        if !path.exists() {
            std::fs::create_dir_all(&dir).map_err(|e| ApiError::Internal(e.to_string()))?;
            img.write_opacity_pfm(&path).map_err(|e| ApiError::Internal(e.to_string()))?;
        }
        Ok((png, name))
    })
    .await?;
    Ok(png_response(png, Some(format!("/api/renders/{name}"))))
}

async fn get_render_file(State(svc): State<Service>, UrlPath(name): UrlPath<String>) -> Result<Response, ApiError> {
    let valid = name.strip_suffix(".pfm").is_some_and(|h| !h.is_empty() && h.bytes().all(|b| b.is_ascii_hexdigit()));
    let path = svc.shared.out_dir.join("renders").join(&name);
    if !valid || !path.is_file() {
        return Err(ApiError::NotFound(format!("no render '{name}'")));
    }
    let bytes = std::fs::read(&path).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

async fn post_render_object(State(svc): State<Service>, body: Bytes) -> Result<Response, ApiError> {
    let req: RenderObjectBody = parse_body(&body)?;
    let cam = req.camera.build(req.resolution, DEFAULT_RESOLUTION)?;
    let opts = RenderOptions::midpoint(req.n_samples.unwrap_or(DEFAULT_SAMPLES));
    opts.validate()?;
    let snap = svc.snapshot();
    if snap.fields.get(&req.field_id).is_none() {
        return Err(ApiError::NotFound(format!("unknown field '{}'", req.field_id)));
    }
    let png = blocking(move || {
        let field = snap.fields.get(&req.field_id).expect("checked above");
        let img = render_object(field, &cam, &snap.scene.object_bounds, &opts)?;
        img.to_png_bytes().map_err(|e| ApiError::Internal(e.to_string()))
    })
    .await?;
    Ok(png_response(png, None))
}

async fn post_train(State(svc): State<Service>, body: Bytes) -> Result<Response, ApiError> {
    let config: TrainConfig = parse_body(&body)?;
    let rec = svc.start_training(config)?;
    Ok((StatusCode::ACCEPTED, Json(rec)).into_response())
}

async fn get_job(State(svc): State<Service>, UrlPath(id): UrlPath<String>) -> Result<Json<JobRecord>, ApiError> {
    svc.job(&id).map(Json).ok_or_else(|| ApiError::NotFound(format!("unknown job '{id}'")))
}

async fn post_cancel(State(svc): State<Service>, UrlPath(id): UrlPath<String>) -> Result<Json<JobRecord>, ApiError> {
    let jobs = lock(&svc.shared.jobs);
    let job = jobs.get(&id).ok_or_else(|| ApiError::NotFound(format!("unknown job '{id}'")))?;
    job.cancel.store(true, Ordering::SeqCst);
    Ok(Json(job.record.clone()))
}

async fn get_job_preview(State(svc): State<Service>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let rec = svc.job(&id).ok_or_else(|| ApiError::NotFound(format!("unknown job '{id}'")))?;
    let path = rec.latest_preview.ok_or_else(|| ApiError::NotFound(format!("job '{id}' has no preview yet")))?;
    let bytes = std::fs::read(&path).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(png_response(bytes, None))
}

#[derive(Serialize)]
struct FieldInfo {
    id: String,
    kind: &'static str,
    channels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_params: Option<usize>,
    checkpoint: Option<PathBuf>,
    proxies: Vec<String>,
}

async fn get_fields(State(svc): State<Service>) -> Json<Vec<FieldInfo>> {
    let snap = svc.snapshot();
    let list = snap
        .fields
        .iter()
        .map(|(id, f)| {
            let p = f.params();
            FieldInfo {
                id: id.to_owned(),
                kind: if p.is_some() { "neural" } else { "analytic" },
                channels: f.channels(),
                hidden: p.map(|p| p.config().hidden),
                levels: p.map(|p| p.config().levels),
                n_params: p.map(|p| p.data.len()),
                checkpoint: snap.scene.fields.get(id).and_then(|s| s.checkpoint.clone()),
                proxies: snap.scene.proxies.iter().filter(|x| x.field == id).map(|x| x.id.clone()).collect(),
            }
        })
        .collect();
    Json(list)
}

/// Serves until the process exits.
pub async fn serve(service: Service, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, service.router()).await
}

/// A server on a background thread; stops when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
}

impl ServerHandle {
    pub fn start(service: Service, addr: SocketAddr) -> std::io::Result<Self> {
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let router = service.router();
        std::thread::spawn(move || {
            let rt = match tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build() {
                Ok(rt) => rt,
                Err(e) => {
                    let _ = addr_tx.send(Err(e));
                    return;
                }
            };
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::bind(addr).await {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = addr_tx.send(Err(e));
                        return;
                    }
                };
                let _ = addr_tx.send(listener.local_addr());
                let _ = axum::serve(listener, router)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await;
            });
        });
        let addr = addr_rx.recv().map_err(std::io::Error::other)??;
        Ok(Self { addr, shutdown: Some(stop_tx) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
