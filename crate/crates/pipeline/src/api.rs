//! JSON-over-HTTP service for the segmentation workbench.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use echoanat_core::cyclegan::{load_checkpoint, translate, ModelBundle};
use echoanat_core::datasets::BusiEntry;
use echoanat_core::metrics::{area_index, center_error, dice};
use echoanat_core::rle::RleMask;
use echoanat_core::segmentation::{init_level_set, morphgac_run_observed, GacInput, GacParams, InitSpec};
use echoanat_core::{Error as CoreError, ImageGrid, Mask};
use serde::{Deserialize, Serialize};

use crate::commands::{run_dir, scan_dataset};
use crate::config::RunConfig;
use crate::jobs::{JobKind, JobQueue, JobResult, TraceFrame, DEFAULT_WORKERS};

#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, code, message)
    }

    fn invalid(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(r.status(), "bad_request", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::new(r.status(), "bad_request", r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Serialize)]
pub struct ImageInfo {
    pub id: String,
    pub class: String,
    pub height: usize,
    pub width: usize,
    pub translated: bool,
}

struct StoredMask {
    image_id: Option<String>,
    mask: Mask,
}

#[derive(Default)]
struct MaskStore {
    masks: Mutex<HashMap<String, StoredMask>>,
    next: AtomicU64,
}

impl MaskStore {
    fn insert(&self, image_id: Option<String>, mask: Mask) -> String {
        let id = format!("m{}", self.next.fetch_add(1, Ordering::Relaxed) + 1);
        self.masks
            .lock()
            .expect("mask store lock")
            .insert(id.clone(), StoredMask { image_id, mask });
        id
    }

    fn get(&self, id: &str) -> Option<(Option<String>, Mask)> {
        self.masks
            .lock()
            .expect("mask store lock")
            .get(id)
            .map(|m| (m.image_id.clone(), m.mask.clone()))
    }
}

struct Inner {
    images: BTreeMap<String, (BusiEntry, ImageInfo)>,
    translate_dir: PathBuf,
    /// Read-only model snapshot for on-demand translation.
    model: Option<(ModelBundle, u64)>,
    tiling: echoanat_core::cyclegan::TileGeometry,
    defaults: GacParams,
    jobs: JobQueue,
    masks: MaskStore,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Indexes the dataset and loads the optional checkpoint. Must be called
    /// inside a tokio runtime (it starts the job workers).
    pub fn new(cfg: &RunConfig, checkpoint: Option<&std::path::Path>) -> crate::error::Result<Self> {
        let run = run_dir(cfg);
        let mut images = BTreeMap::new();
        for entry in scan_dataset(&cfg.dataset.root)? {
            let img = ImageGrid::load_png(&entry.image_path)?;
            let info = ImageInfo {
                id: entry.id.clone(),
                class: entry.class_label.as_str().to_string(),
                height: img.height(),
                width: img.width(),
                translated: false,
            };
            images.insert(entry.id.clone(), (entry, info));
        }
        let model = match checkpoint {
            Some(p) => {
                let state = load_checkpoint(p)?;
                Some((state.bundle, state.step))
            }
            None => None,
        };
        for (id, (_, info)) in images.iter_mut() {
            info.translated = model.is_some() || run.translated(id).exists();
        }
        Ok(AppState(Arc::new(Inner {
            images,
            translate_dir: run.translate_dir(),
            model,
            tiling: cfg.tiling(),
            defaults: cfg.segmentation.clone(),
            jobs: JobQueue::start(DEFAULT_WORKERS),
            masks: MaskStore::default(),
        })))
    }

    fn entry(&self, id: &str) -> ApiResult<&(BusiEntry, ImageInfo)> {
        self.0
            .images
            .get(id)
            .ok_or_else(|| ApiError::not_found("unknown_image", format!("no image with id `{id}`")))
    }

    /// Source or translated image; translations come from the run directory
    /// or, failing that, the loaded model.
    fn load_view(&self, id: &str, view: View) -> ApiResult<(ImageGrid, Option<Vec<u8>>)> {
        let (entry, _) = self.entry(id)?;
        let core = |e: CoreError| ApiError::internal(e.to_string());
        match view {
            View::Us => {
                let bytes = std::fs::read(&entry.image_path).map_err(|e| ApiError::internal(e.to_string()))?;
                Ok((ImageGrid::load_png(&entry.image_path).map_err(core)?, Some(bytes)))
            }
            View::Translated => {
                let path = self.0.translate_dir.join(format!("{id}_pa.png"));
                if path.exists() {
                    let bytes = std::fs::read(&path).map_err(|e| ApiError::internal(e.to_string()))?;
                    return Ok((ImageGrid::load_png(&path).map_err(core)?, Some(bytes)));
                }
                let (bundle, steps) = self.0.model.as_ref().ok_or_else(|| {
                    ApiError::not_found("translation_unavailable", format!("no translation for `{id}`"))
                })?;
                let src = ImageGrid::load_png(&entry.image_path).map_err(core)?;
                Ok((translate(bundle, *steps, &src, self.0.tiling).map_err(core)?, None))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    #[default]
    Us,
    Translated,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewQuery {
    #[serde(default)]
    view: View,
}

async fn list_images(State(state): State<AppState>) -> Json<Vec<ImageInfo>> {
    Json(state.0.images.values().map(|(_, info)| info.clone()).collect())
}

async fn get_image(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    q: Result<Query<ViewQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = q?;
    let st = state.clone();
    let (img, bytes) = tokio::task::spawn_blocking(move || st.load_view(&id, q.view))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    let bytes = match bytes {
        Some(b) => b,
        None => img.encode_png().map_err(|e| ApiError::internal(e.to_string()))?,
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ApiInit {
    /// `center` is `[row, col]` in image pixels.
    Circle { center: [f64; 2], radius: f64 },
    Mask { mask: RleMask },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    pub image_id: String,
    #[serde(default)]
    pub view: View,
    pub init: ApiInit,
    /// Missing keys fall back to the configured defaults.
    #[serde(default)]
    pub params: Option<serde_json::Map<String, serde_json::Value>>,
    #[serde(default)]
    pub trace_every: usize,
}

#[derive(Debug, Serialize)]
struct JobCreated {
    job_id: String,
}

fn merged_params(defaults: &GacParams, overrides: Option<serde_json::Map<String, serde_json::Value>>) -> ApiResult<GacParams> {
    let mut base = match serde_json::to_value(defaults).expect("params serialise") {
        serde_json::Value::Object(m) => m,
        _ => unreachable!("params serialise to an object"),
    };
    base.extend(overrides.unwrap_or_default());
    let params: GacParams = serde_json::from_value(serde_json::Value::Object(base))
        .map_err(|e| ApiError::invalid("invalid_params", e.to_string()))?;
    params
        .validate()
        .map_err(|e| ApiError::invalid("invalid_params", e.to_string()))?;
    Ok(params)
}

async fn post_segment(
    State(state): State<AppState>,
    body: Result<Json<SegmentRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<JobCreated>)> {
    let Json(req) = body?;
    let (_, info) = state.entry(&req.image_id)?;
    let shape = (info.height, info.width);
    let params = merged_params(&state.0.defaults, req.params)?;
    let init = match req.init {
        ApiInit::Circle { center, radius } => InitSpec::Circle {
            center: (center[0], center[1]),
            radius,
        },
        ApiInit::Mask { mask } => {
            InitSpec::Mask(mask.decode().map_err(|e| ApiError::invalid("invalid_seed", e.to_string()))?)
        }
    };
    init_level_set(&init, shape).map_err(|e| ApiError::invalid("invalid_seed", e.to_string()))?;
    if req.view == View::Translated && !info.translated {
        return Err(ApiError::not_found(
            "translation_unavailable",
            format!("no translation for `{}`", req.image_id),
        ));
    }

    let st = state.clone();
    let image_id = req.image_id.clone();
    let (view, trace_every) = (req.view, req.trace_every);
    let job_id = state.0.jobs.submit(
        JobKind::Segment,
        Box::new(move |progress| {
            let (img, _) = st.load_view(&image_id, view).map_err(|e| e.message)?;
            let total = params.iterations.max(1) as f64;
            let run = morphgac_run_observed(GacInput::Image(&img), &init, &params, trace_every, &mut |it, _| {
                progress(it as f64 / total)
            })
            .map_err(|e| e.to_string())?;
            let mask_id = st.0.masks.insert(Some(image_id.clone()), run.mask.clone());
            Ok(JobResult {
                mask_id,
                mask: RleMask::encode(&run.mask),
                iterations: run.iterations,
                stopped_early: run.stopped_early,
                trace: run
                    .trace
                    .iter()
                    .map(|(iteration, m)| TraceFrame {
                        iteration: *iteration,
                        mask: RleMask::encode(m),
                    })
                    .collect(),
            })
        }),
    );
    Ok((StatusCode::ACCEPTED, Json(JobCreated { job_id })))
}

async fn get_job(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let record = state
        .0
        .jobs
        .get(&id)
        .ok_or_else(|| ApiError::not_found("unknown_job", format!("no job with id `{id}`")))?;
    Ok(Json(record).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskUpload {
    #[serde(default)]
    pub image_id: Option<String>,
    pub mask: RleMask,
}

#[derive(Debug, Serialize)]
struct MaskCreated {
    mask_id: String,
}

async fn post_mask(
    State(state): State<AppState>,
    body: Result<Json<MaskUpload>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<MaskCreated>)> {
    let Json(req) = body?;
    let mask = req
        .mask
        .decode()
        .map_err(|e| ApiError::invalid("invalid_mask", e.to_string()))?;
    if let Some(id) = &req.image_id {
        let (_, info) = state.entry(id)?;
        if (info.height, info.width) != mask.shape() {
            return Err(ApiError::invalid(
                "invalid_mask",
                format!("mask is {:?}, image `{id}` is {}x{}", mask.shape(), info.height, info.width),
            ));
        }
    }
    let mask_id = state.0.masks.insert(req.image_id, mask);
    Ok((StatusCode::CREATED, Json(MaskCreated { mask_id })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskQuery {
    #[serde(default)]
    format: Option<String>,
}

#[derive(Debug, Serialize)]
struct MaskBody {
    mask_id: String,
    image_id: Option<String>,
    mask: RleMask,
}

async fn get_mask(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    q: Result<Query<MaskQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = q?;
    let (image_id, mask) = state
        .0
        .masks
        .get(&id)
        .ok_or_else(|| ApiError::not_found("unknown_mask", format!("no mask with id `{id}`")))?;
    match q.format.as_deref() {
        None | Some("rle") => Ok(Json(MaskBody {
            mask_id: id,
            image_id,
            mask: RleMask::encode(&mask),
        })
        .into_response()),
        Some("png") => {
            let bytes = mask.encode_png().map_err(|e| ApiError::internal(e.to_string()))?;
            Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
        }
        Some(other) => Err(ApiError::invalid("bad_format", format!("unknown format `{other}`; use rle or png"))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsQuery {
    mask_a: String,
    mask_b: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBody {
    pub dice: f64,
    pub center_error_pct: Option<f64>,
    pub area_index_pct: f64,
    pub degenerate: bool,
}

async fn get_metrics(
    State(state): State<AppState>,
    q: Result<Query<MetricsQuery>, QueryRejection>,
) -> ApiResult<Json<MetricsBody>> {
    let Query(q) = q?;
    let fetch = |id: &str| {
        state
            .0
            .masks
            .get(id)
            .map(|(_, m)| m)
            .ok_or_else(|| ApiError::not_found("unknown_mask", format!("no mask with id `{id}`")))
    };
    let (a, b) = (fetch(&q.mask_a)?, fetch(&q.mask_b)?);
    let invalid = |e: CoreError| ApiError::invalid("shape_mismatch", e.to_string());
    let center = center_error(&a, &b).map_err(invalid)?;
    Ok(Json(MetricsBody {
        dice: dice(&a, &b).map_err(invalid)?,
        center_error_pct: center,
        area_index_pct: area_index(&a, &b).map_err(invalid)?,
        degenerate: center.is_none(),
    }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/images", get(list_images))
        .route("/api/images/{id}", get(get_image))
        .route("/api/segment", post(post_segment))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/masks", post(post_mask))
        .route("/api/masks/{id}", get(get_mask))
        .route("/api/metrics", get(get_metrics))
        .fallback(|| async { ApiError::not_found("not_found", "no such endpoint") })
        .with_state(state)
}

pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
