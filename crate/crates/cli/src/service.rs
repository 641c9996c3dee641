//! Local HTTP service: render and classify single poses, launch runs on a
//! bounded worker pool and stream their records as server-sent events.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::f64::consts::TAU;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use futures::{Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{watch, Semaphore};

use posehunt_core::classifier::{BackendKind, BackendSpec, Classifier, ClassifierError, ClassifierResponse};
use posehunt_core::geometry::{wrap_angle, GeometryError, PoseParams};
use posehunt_core::renderer::{render, LightingConfig, RenderOutput, Scene, SceneConfig};
use posehunt_core::run::{PreparedRun, RunError, RunManifest, RunSpec, Task, RECORDS_FILE};

pub struct ServiceConfig {
    pub scene: SceneConfig,
    pub backend: BackendSpec,
    pub runs_dir: PathBuf,
    /// Runs executing at once; further runs queue.
    pub workers: usize,
}

#[derive(Debug, Clone)]
enum RunState {
    Queued,
    Running,
    Completed(Box<RunManifest>),
    Failed(String),
}

impl RunState {
    fn name(&self) -> &'static str {
        match self {
            RunState::Queued => "queued",
            RunState::Running => "running",
            RunState::Completed(_) => "completed",
            RunState::Failed(_) => "failed",
        }
    }

    fn is_terminal(&self) -> bool {
        matches!(self, RunState::Completed(_) | RunState::Failed(_))
    }
}

struct RunEntry {
    task: &'static str,
    dir: PathBuf,
    state: watch::Receiver<RunState>,
}

pub struct AppState {
    scene: Arc<Scene>,
    backend_spec: BackendSpec,
    backend: Mutex<Option<Arc<dyn Classifier>>>,
    runs: Mutex<BTreeMap<String, RunEntry>>,
    runs_dir: PathBuf,
    pool: Arc<Semaphore>,
    next_run: AtomicU64,
}

impl AppState {
    /// Loads the scene. External backends connect lazily on first use so the
    /// service can start, and report 503, while the backend is down.
    pub fn new(cfg: ServiceConfig) -> Result<Arc<Self>, RunError> {
        let scene = Arc::new(Scene::load(cfg.scene)?);
        let backend = match cfg.backend.kind {
            BackendKind::Synthetic(_) => Some(cfg.backend.connect()?),
            BackendKind::External(_) => None,
        };
        Ok(Arc::new(Self {
            scene,
            backend_spec: cfg.backend,
            backend: Mutex::new(backend),
            runs: Mutex::new(BTreeMap::new()),
            runs_dir: cfg.runs_dir,
            pool: Arc::new(Semaphore::new(cfg.workers.max(1))),
            next_run: AtomicU64::new(1),
        }))
    }

    fn backend(&self) -> Result<Arc<dyn Classifier>, ApiError> {
        let mut slot = self.backend.lock().expect("backend lock");
        if let Some(b) = slot.as_ref() {
            return Ok(b.clone());
        }
        let b = self.backend_spec.connect().map_err(|e| self.unavailable(&e))?;
        *slot = Some(b.clone());
        Ok(b)
    }

    fn unavailable(&self, e: &ClassifierError) -> ApiError {
        let endpoint = match &self.backend_spec.kind {
            BackendKind::External(c) => Some(c.endpoint.clone()),
            BackendKind::Synthetic(_) => None,
        };
        ApiError::Unavailable {
            message: e.to_string(),
            endpoint,
        }
    }

    /// Maps a classify failure, dropping the cached connection when the
    /// backend itself is gone.
    fn classifier_error(&self, e: ClassifierError) -> ApiError {
        match e {
            ClassifierError::Transport { .. } => {
                *self.backend.lock().expect("backend lock") = None;
                self.unavailable(&e)
            }
            other => ApiError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest { message: String, field: Option<String> },
    NotFound(String),
    Unavailable { message: String, endpoint: Option<String> },
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest { message, field } => {
                (StatusCode::BAD_REQUEST, json!({ "error": message, "field": field }))
            }
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, json!({ "error": m })),
            ApiError::Unavailable { message, endpoint } => (
                StatusCode::SERVICE_UNAVAILABLE,
                json!({
                    "error": "classifier backend unavailable",
                    "handshake": { "status": "failed", "endpoint": endpoint, "detail": message },
                }),
            ),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": m })),
        };
        (status, Json(body)).into_response()
    }
}

fn bad(message: impl Into<String>, field: Option<&str>) -> ApiError {
    ApiError::BadRequest {
        message: message.into(),
        field: field.map(str::to_string),
    }
}

/// Parses a JSON body, reporting the path of the first bad field.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let mut de = serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        let field = (path != ".").then_some(path);
        ApiError::BadRequest {
            message: e.into_inner().to_string(),
            field,
        }
    })
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum LightingChoice {
    Preset(String),
    Custom(LightingConfig),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRequest {
    pose: PoseParams,
    #[serde(default)]
    lighting: Option<LightingChoice>,
}

impl PoseRequest {
    /// Angles wrap into `[0, 2π)`; translations must satisfy the frustum.
    fn checked_pose(&self, scene: &Scene) -> Result<PoseParams, ApiError> {
        let mut pose = self.pose;
        for (name, a) in [
            ("theta_y", &mut pose.theta_y),
            ("theta_p", &mut pose.theta_p),
            ("theta_r", &mut pose.theta_r),
        ] {
            if !a.is_finite() {
                return Err(bad(format!("{name} must be finite"), Some(&format!("pose.{name}"))));
            }
            *a = wrap_angle(*a);
        }
        pose.validate(&scene.frustum()).map_err(|e| {
            let field = match &e {
                GeometryError::DepthOutOfRange { .. } => "pose.z_delta".to_string(),
                GeometryError::LateralOutOfRange { axis, .. } => format!("pose.{axis}_delta"),
                GeometryError::NonFiniteAngle { name, .. } => format!("pose.{name}"),
                _ => "pose".to_string(),
            };
            bad(e.to_string(), Some(&field))
        })?;
        Ok(pose)
    }

    fn scene(&self, base: &Arc<Scene>) -> Result<Arc<Scene>, ApiError> {
        let lighting = match &self.lighting {
            None => return Ok(base.clone()),
            Some(LightingChoice::Preset(name)) => LightingConfig::preset(name).ok_or_else(|| {
                bad(format!("unknown lighting preset '{name}' (bright, medium, dark)"), Some("lighting"))
            })?,
            Some(LightingChoice::Custom(l)) => *l,
        };
        base.with_lighting(lighting)
            .map(Arc::new)
            .map_err(|e| bad(e.to_string(), Some("lighting")))
    }
}

fn bbox_header(out: &RenderOutput) -> HeaderValue {
    let text = match out.coverage_bbox() {
        Some([x0, y0, x1, y1]) => format!("{x0},{y0},{x1},{y1}"),
        None => "none".into(),
    };
    HeaderValue::from_str(&text).expect("ascii header")
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))
}

async fn get_scene(State(st): State<Arc<AppState>>) -> Json<Value> {
    let cfg = st.scene.config();
    let f = st.scene.frustum();
    let [lo, hi] = f.depth_range;
    let mesh = st.scene.mesh();
    let backend = match st.backend() {
        Ok(b) => json!({ "status": "ok", "handshake": b.info() }),
        Err(ApiError::Unavailable { message, endpoint }) => {
            json!({ "status": "unavailable", "endpoint": endpoint, "detail": message })
        }
        Err(_) => json!({ "status": "unknown" }),
    };
    let presets: BTreeMap<&str, LightingConfig> = ["bright", "medium", "dark"]
        .into_iter()
        .filter_map(|n| LightingConfig::preset(n).map(|l| (n, l)))
        .collect();
    Json(json!({
        "scene_hash": st.scene.hash(),
        "mesh": {
            "source": cfg.mesh,
            "vertices": mesh.vertices().len(),
            "faces": mesh.faces().len(),
            "textured": mesh.texture().is_some(),
        },
        "image_size": cfg.image_size,
        "camera": cfg.camera,
        "lighting": cfg.lighting,
        "lighting_presets": presets,
        "true_class": cfg.true_class,
        "limits": {
            "depth_range": f.depth_range,
            "half_angle_v": f.half_angle_v,
            "camera_z": f.camera_z,
            "lateral_bound_at_depth_limits": [f.lateral_bound(lo), f.lateral_bound(hi)],
            "angle_range": [0.0, TAU],
        },
        "backend": backend,
    }))
}

async fn post_render(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: PoseRequest = parse_body(&body)?;
    let pose = req.checked_pose(&st.scene)?;
    let scene = req.scene(&st.scene)?;
    let out = blocking(move || render(&scene, &pose)).await?;
    let png = out.encode_png();
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (header::HeaderName::from_static("x-coverage-bbox"), bbox_header(&out)),
        ],
        png,
    )
        .into_response())
}

#[derive(Serialize)]
struct Ranked {
    class: usize,
    label: String,
    prob: f64,
}

async fn post_classify(State(st): State<Arc<AppState>>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: PoseRequest = parse_body(&body)?;
    let pose = req.checked_pose(&st.scene)?;
    let scene = req.scene(&st.scene)?;
    let backend = st.backend()?;
    let b = backend.clone();
    let (out, resp) = blocking(move || {
        let out = render(&scene, &pose);
        let resp = b.classify(&out);
        (out, resp)
    })
    .await?;
    let resp: ClassifierResponse = resp.map_err(|e| st.classifier_error(e))?;
    let labels = backend.labels();
    let top5: Vec<Ranked> = resp
        .top_k(5)
        .into_iter()
        .map(|(class, prob)| Ranked {
            class,
            label: labels.get(class).cloned().unwrap_or_default(),
            prob,
        })
        .collect();
    let truth = st.scene.config().true_class;
    Ok(Json(json!({
        "pose": pose,
        "scene_hash": st.scene.hash(),
        "coverage_bbox": out.coverage_bbox(),
        "image_png_base64": base64::engine::general_purpose::STANDARD.encode(out.encode_png()),
        "response": resp,
        "top5": top5,
        "correct": truth.map(|t| t == resp.top_label),
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SearchRequest {
    /// A task keyed by kind, e.g. `{"attack": {"mode": "rs"}}`.
    task: Task,
}

async fn post_search(State(st): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let req: SearchRequest = parse_body(&body)?;
    let backend = st.backend()?;
    let spec = RunSpec {
        scene: st.scene.config().clone(),
        backend: st.backend_spec.clone(),
        task: req.task,
    };
    let task = spec.task.name();
    let n = st.next_run.fetch_add(1, Ordering::SeqCst);
    let run_id = format!("run{n:04}-{}", &spec.digest()[..8]);
    let dir = st.runs_dir.join(&run_id);
    let prepared = PreparedRun {
        spec,
        scene: st.scene.clone(),
        backend,
    };
    let (tx, rx) = watch::channel(RunState::Queued);
    st.runs.lock().expect("registry lock").insert(
        run_id.clone(),
        RunEntry {
            task,
            dir: dir.clone(),
            state: rx,
        },
    );
    let pool = st.pool.clone();
    let id = run_id.clone();
    tokio::spawn(async move {
        let _permit = pool.acquire_owned().await.expect("pool open");
        tx.send_replace(RunState::Running);
        let result = tokio::task::spawn_blocking(move || prepared.execute(&dir, Some(id))).await;
        let state = match result {
            Ok(Ok(m)) => RunState::Completed(Box::new(m)),
            Ok(Err(e)) => RunState::Failed(e.to_string()),
            Err(e) => RunState::Failed(format!("worker failed: {e}")),
        };
        tx.send_replace(state);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "run_id": run_id, "task": task }))))
}

fn entry(st: &AppState, id: &str) -> Result<(watch::Receiver<RunState>, PathBuf, &'static str), ApiError> {
    let runs = st.runs.lock().expect("registry lock");
    let e = runs.get(id).ok_or_else(|| ApiError::NotFound(format!("no run '{id}'")))?;
    Ok((e.state.clone(), e.dir.clone(), e.task))
}

async fn list_runs(State(st): State<Arc<AppState>>) -> Json<Value> {
    let runs = st.runs.lock().expect("registry lock");
    let list: Vec<Value> = runs
        .iter()
        .map(|(id, e)| json!({ "run_id": id, "task": e.task, "state": e.state.borrow().name() }))
        .collect();
    Json(json!({ "runs": list }))
}

/// `status` event, then one `record` event per JSONL line once the run
/// ends, then a terminal `summary` event.
async fn run_events(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let (mut rx, dir, task) = entry(&st, &id)?;
    let head = Event::default()
        .event("status")
        .json_data(json!({ "run_id": id, "task": task, "state": rx.borrow().name() }))
        .expect("json event");
    let tail = async move {
        let state = match rx.wait_for(RunState::is_terminal).await {
            Ok(s) => s.clone(),
            Err(_) => RunState::Failed("run worker disappeared".into()),
        };
        let mut events = Vec::new();
        if let Ok(text) = tokio::fs::read_to_string(dir.join(RECORDS_FILE)).await {
            events.extend(text.lines().map(|l| Event::default().event("record").data(l)));
        }
        let summary = match &state {
            RunState::Completed(m) => json!({
                "run_id": id, "state": "completed", "records": events.len(), "summary": m.summary,
            }),
            RunState::Failed(e) => json!({
                "run_id": id, "state": "failed", "records": events.len(), "error": e,
            }),
            _ => unreachable!("terminal state"),
        };
        events.push(Event::default().event("summary").json_data(summary).expect("json event"));
        futures::stream::iter(events.into_iter().map(Ok))
    };
    let stream = futures::stream::iter([Ok(head)]).chain(futures::stream::once(tail).flatten());
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn run_artifacts(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let (rx, dir, _) = entry(&st, &id)?;
    let state = rx.borrow().clone();
    let mut files = Vec::new();
    if let Ok(mut rd) = tokio::fs::read_dir(&dir).await {
        while let Ok(Some(e)) = rd.next_entry().await {
            let name = e.file_name().to_string_lossy().into_owned();
            let size = e.metadata().await.map(|m| m.len()).unwrap_or(0);
            files.push(json!({ "name": name, "size": size, "url": format!("/runs/{id}/artifacts/{name}") }));
        }
    }
    files.sort_by(|a, b| a["name"].as_str().cmp(&b["name"].as_str()));
    Ok(Json(json!({ "run_id": id, "state": state.name(), "files": files })))
}

async fn run_artifact(
    State(st): State<Arc<AppState>>,
    Path((id, name)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let (_, dir, _) = entry(&st, &id)?;
    if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
        return Err(bad(format!("invalid artifact name '{name}'"), Some("name")));
    }
    let bytes = tokio::fs::read(dir.join(&name))
        .await
        .map_err(|_| ApiError::NotFound(format!("run '{id}' has no artifact '{name}'")))?;
    let ctype = match name.rsplit('.').next() {
        Some("png") => "image/png",
        Some("json") => "application/json",
        Some("jsonl") => "application/x-ndjson",
        Some("csv") => "text/csv",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, ctype)], bytes).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scene", get(get_scene))
        .route("/render", post(post_render))
        .route("/classify", post(post_classify))
        .route("/search", post(post_search))
        .route("/runs", get(list_runs))
        .route("/runs/{id}", get(run_events))
        .route("/runs/{id}/artifacts", get(run_artifacts))
        .route("/runs/{id}/artifacts/{name}", get(run_artifact))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
