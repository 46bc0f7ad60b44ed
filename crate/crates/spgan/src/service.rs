//! HTTP service over a read-only checkpoint registry. JSON bodies carry
//! PNGs as base64; every route lives under `/v1/`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use spgan_core::labelkit::{CannyThresholds, EditOp};
use spgan_core::netcore::{Generator, Stage};
use tokio::sync::RwLock;

use crate::error::Error;
use crate::io::Sidecar;
use crate::{ops, store};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    /// File stem of the checkpoint.
    pub id: String,
    pub preset: String,
    pub class_names: Vec<String>,
    pub num_classes: usize,
    pub stage: Stage,
    pub resolution: usize,
    /// Last completed training phase.
    pub phase: u8,
    pub partial: bool,
    pub path: String,
    /// SHA-256 of the checkpoint file, verified at load.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub path: String,
    pub reason: String,
}

struct Model {
    entry: ModelEntry,
    generator: Generator,
}

/// Checkpoints loaded from one directory.
pub struct Registry {
    dir: Option<PathBuf>,
    preset: Option<String>,
    models: BTreeMap<String, Model>,
    rejected: Vec<Rejected>,
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            dir: None,
            preset: None,
            models: BTreeMap::new(),
            rejected: Vec::new(),
        }
    }

    /// Load every `*.ckpt` in `dir`, keeping only `preset` when given.
    /// Unreadable or corrupt files are logged and listed as rejected.
    pub fn scan(dir: &Path, preset: Option<&str>) -> Self {
        let mut reg = Self {
            dir: Some(dir.to_path_buf()),
            preset: preset.map(Into::into),
            ..Self::empty()
        };
        let mut paths: Vec<PathBuf> = match std::fs::read_dir(dir) {
            Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|e| e == "ckpt")).collect(),
            Err(e) => {
                tracing::warn!(dir = %dir.display(), error = %e, "cannot read models directory");
                Vec::new()
            }
        };
        paths.sort();
        for path in paths {
            match load_model(&path) {
                Ok(m) if preset.is_some_and(|p| p != m.entry.preset) => {
                    tracing::info!(path = %path.display(), preset = %m.entry.preset, "skipped: other preset");
                }
                Ok(m) => {
                    tracing::info!(id = %m.entry.id, checksum = %m.entry.checksum, "loaded checkpoint");
                    reg.models.insert(m.entry.id.clone(), m);
                }
                Err(e) => {
                    tracing::error!(path = %path.display(), error = %e, "rejected checkpoint");
                    reg.rejected.push(Rejected {
                        path: path.display().to_string(),
                        reason: e.to_string(),
                    });
                }
            }
        }
        reg
    }

    fn rescan(&self) -> Self {
        match &self.dir {
            Some(d) => Self::scan(d, self.preset.as_deref()),
            None => Self::empty(),
        }
    }

    pub fn entries(&self) -> Vec<ModelEntry> {
        self.models.values().map(|m| m.entry.clone()).collect()
    }
}

fn load_model(path: &Path) -> crate::Result<Model> {
    let (ckpt, checksum) = store::load_checkpoint(path)?;
    let generator = ckpt.generator()?;
    let h = &ckpt.header;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Model {
        entry: ModelEntry {
            id,
            preset: h.config.name.clone(),
            class_names: h.class_names.clone(),
            num_classes: h.class_names.len(),
            stage: h.generator.stage,
            resolution: generator.resolution(),
            phase: h.phase,
            partial: h.partial,
            path: path.display().to_string(),
            checksum,
        },
        generator,
    })
}

type Shared = Arc<RwLock<Registry>>;

/// Error body: `{"error": message, "kind": category}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        use spgan_core::Error as E;
        let (status, kind) = match &e {
            Error::Core(E::Dimension(_)) => (StatusCode::BAD_REQUEST, "dimension"),
            Error::Core(E::Parameter(_)) => (StatusCode::BAD_REQUEST, "parameter"),
            Error::Core(E::Input(_)) => (StatusCode::BAD_REQUEST, "input"),
            Error::Core(E::Data(_)) => (StatusCode::BAD_REQUEST, "data"),
            Error::Core(E::SampleSize(_)) => (StatusCode::BAD_REQUEST, "sample_size"),
            Error::Core(E::Config(_)) => (StatusCode::CONFLICT, "config"),
            Error::Core(E::State(_)) => (StatusCode::CONFLICT, "state"),
            Error::Format { .. } => (StatusCode::BAD_REQUEST, "format"),
            Error::Usage(_) => (StatusCode::BAD_REQUEST, "usage"),
            Error::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        };
        Self::new(status, kind, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "request", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message, "kind": self.kind }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn unbase64(field: &str, data: &str) -> Result<Vec<u8>, ApiError> {
    B64.decode(data).map_err(|e| Error::format("request", field, format!("invalid base64: {e}")).into())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn healthz(State(reg): State<Shared>) -> Response {
    match reg.try_read() {
        Ok(_) => (StatusCode::OK, "ok").into_response(),
        Err(_) => (StatusCode::SERVICE_UNAVAILABLE, "loading").into_response(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelList {
    pub models: Vec<ModelEntry>,
    pub rejected: Vec<Rejected>,
}

async fn models(State(reg): State<Shared>) -> Json<ModelList> {
    let reg = reg.read().await;
    Json(ModelList {
        models: reg.entries(),
        rejected: reg.rejected.clone(),
    })
}

/// Rescan the models directory. Waits for in-flight requests and holds new
/// ones until the new registry is in place.
async fn reload(State(reg): State<Shared>) -> ApiResult<ModelList> {
    let mut guard = reg.write_owned().await;
    let guard = tokio::task::spawn_blocking(move || {
        *guard = guard.rescan();
        guard
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(Json(ModelList {
        models: guard.entries(),
        rejected: guard.rejected.clone(),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeRequest {
    /// Label map PNG of class indices.
    pub label: String,
    pub class_names: Vec<String>,
    /// Binary sketch PNG.
    pub sketch: String,
    /// Binary structure mask PNG; defaults to every non-background pixel.
    #[serde(default)]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComposeResponse {
    pub composite: String,
    pub manifest: Sidecar,
}

async fn compose(body: Result<Json<ComposeRequest>, JsonRejection>) -> ApiResult<ComposeResponse> {
    let Json(req) = body?;
    let label = unbase64("label", &req.label)?;
    let sketch = unbase64("sketch", &req.sketch)?;
    let mask = req.mask.as_deref().map(|m| unbase64("mask", m)).transpose()?;
    blocking(move || {
        let (png, manifest) = ops::compose_png(&label, req.class_names, &sketch, mask.as_deref())?;
        Ok(Json(ComposeResponse {
            composite: B64.encode(png),
            manifest,
        }))
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchRequest {
    pub image: String,
    #[serde(default)]
    pub canny: Option<CannyThresholds>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchResponse {
    pub sketch: String,
    pub manifest: Sidecar,
}

async fn sketch(body: Result<Json<SketchRequest>, JsonRejection>) -> ApiResult<SketchResponse> {
    let Json(req) = body?;
    let image = unbase64("image", &req.image)?;
    blocking(move || {
        let (png, manifest) = ops::sketch_png_of(&image, req.canny.unwrap_or(CannyThresholds::Auto))?;
        Ok(Json(SketchResponse {
            sketch: B64.encode(png),
            manifest,
        }))
    })
    .await
}

/// Label edits need `label` and `class_names`; stroke edits need `sketch`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
    #[serde(default)]
    pub sketch: Option<String>,
    pub op: EditOp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditResponse {
    /// Edited PNG, label or sketch as the operation requires.
    pub result: String,
    pub manifest: Sidecar,
}

async fn edit(body: Result<Json<EditRequest>, JsonRejection>) -> ApiResult<EditResponse> {
    let Json(req) = body?;
    let missing = |f: &str| ApiError::new(StatusCode::BAD_REQUEST, "request", format!("{} edits need `{f}`", req.op.kind().name()));
    let job: Box<dyn FnOnce() -> crate::Result<(Vec<u8>, Sidecar)> + Send> = if req.op.kind().applies_to_sketch() {
        let sketch = unbase64("sketch", req.sketch.as_deref().ok_or_else(|| missing("sketch"))?)?;
        let op = req.op.clone();
        Box::new(move || ops::edit_sketch_png(&sketch, &op))
    } else {
        let label = unbase64("label", req.label.as_deref().ok_or_else(|| missing("label"))?)?;
        let names = req.class_names.clone().ok_or_else(|| missing("class_names"))?;
        let op = req.op.clone();
        Box::new(move || ops::edit_label_png(&label, names, &op))
    };
    blocking(move || {
        let (png, manifest) = job()?;
        Ok(Json(EditResponse {
            result: B64.encode(png),
            manifest,
        }))
    })
    .await
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisRequest {
    /// Registry id of the checkpoint.
    pub checkpoint: String,
    /// Composite label PNG at the checkpoint resolution or half of it.
    pub composite: String,
    #[serde(default)]
    pub num_classes: Option<usize>,
    /// Accepted for forward compatibility; inference is deterministic.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisResponse {
    /// 16-bit grayscale PNG.
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub checkpoint: String,
    pub checksum: String,
}

async fn synthesize(State(reg): State<Shared>, body: Result<Json<SynthesisRequest>, JsonRejection>) -> ApiResult<SynthesisResponse> {
    let Json(req) = body?;
    let composite = unbase64("composite", &req.composite)?;
    let guard = reg.read_owned().await;
    if !guard.models.contains_key(&req.checkpoint) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("unknown checkpoint {:?}; loaded: {}", req.checkpoint, guard.models.keys().cloned().collect::<Vec<_>>().join(", ")),
        ));
    }
    blocking(move || {
        let m = &guard.models[&req.checkpoint];
        let (png, width, height) = ops::synthesize_png(&m.generator, &m.entry.class_names, &composite, req.num_classes)?;
        Ok(Json(SynthesisResponse {
            image: B64.encode(png),
            width,
            height,
            checkpoint: m.entry.id.clone(),
            checksum: m.entry.checksum.clone(),
        }))
    })
    .await
}

/// Routes under `/v1/`, plus `/healthz`. Static files from `ui` are served
/// for every other path.
pub fn router(registry: Registry, ui: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/healthz", get(healthz))
        .route("/models", get(models))
        .route("/compose", post(compose))
        .route("/sketch", post(sketch))
        .route("/edit", post(edit))
        .route("/synthesize", post(synthesize))
        .route("/admin/reload", post(reload));
    let shared: Shared = Arc::new(RwLock::new(registry));
    let app = Router::new().nest("/v1", api).route("/healthz", get(healthz)).with_state(shared);
    match ui {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app,
    }
}

/// Serve until interrupted.
pub async fn serve(addr: SocketAddr, app: Router) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Usage(format!("cannot bind {addr}: {e}")))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Usage(format!("server error: {e}")))
}
