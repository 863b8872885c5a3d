//! Read-only HTTP service over one loaded scene and field.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::Deserialize;

use semfield::render::{render_with, RenderOptions, RenderOutput};
use semfield::scene::{load_scene, Split};
use semfield::segment::{open_vocab_segment, pca_project, prompt_segment, LabelSet, DEFAULT_THRESHOLDS};
use semfield::tensor::{encode_gray_png, encode_png};
use semfield::{CameraView, GaussianField, Scene, Tensor};

use crate::api::*;

/// Environment variable that overrides the bind address.
pub const BIND_ENV: &str = "SEMFIELD_BIND";
/// Opacity below which a prompted pixel counts as empty space.
pub const NO_SURFACE_ALPHA: f32 = 1.0 / 255.0;
const BODY_LIMIT: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub scene_dir: PathBuf,
    pub field_path: PathBuf,
    /// Longest served image side; larger scenes render downsampled.
    pub max_resolution: usize,
    pub thresholds: [f64; 3],
}

impl ServiceConfig {
    pub fn new(scene_dir: impl Into<PathBuf>, field_path: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            scene_dir: scene_dir.into(),
            field_path: field_path.into(),
            max_resolution: 1024,
            thresholds: DEFAULT_THRESHOLDS,
        }
    }

    /// Applies [`BIND_ENV`] when set.
    pub fn with_env(mut self) -> Result<Self, String> {
        if let Ok(v) = std::env::var(BIND_ENV) {
            self.bind = v.parse().map_err(|e| format!("{BIND_ENV}={v}: {e}"))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.bind.port() == 0 {
            return Err("bind port must be nonzero".into());
        }
        if self.max_resolution < 16 {
            return Err(format!("max_resolution must be at least 16, got {}", self.max_resolution));
        }
        Ok(())
    }
}

/// Immutable snapshot shared by all handlers.
pub struct AppState {
    pub scene: Scene,
    pub field: GaussianField,
    pub labels: Option<LabelSet>,
    /// Intrinsics and size used for every request.
    pub camera: CameraView,
    pub thresholds: [f64; 3],
    errors: AtomicU64,
}

impl AppState {
    pub fn new(scene: Scene, field: GaussianField, max_resolution: usize, thresholds: [f64; 3]) -> semfield::Result<Self> {
        let base = scene
            .views
            .first()
            .ok_or_else(|| semfield::Error::Manifest("scene has no views".into()))?
            .camera
            .clone();
        let side = base.width.max(base.height);
        let camera = if side > max_resolution { base.downsampled(side.div_ceil(max_resolution)) } else { base };
        let labels = scene.labels.clone();
        Ok(AppState { scene, field, labels, camera, thresholds, errors: AtomicU64::new(0) })
    }

    pub fn load(cfg: &ServiceConfig) -> semfield::Result<Self> {
        let scene = load_scene(&cfg.scene_dir)?;
        let field = GaussianField::load(&cfg.field_path)?;
        AppState::new(scene, field, cfg.max_resolution, cfg.thresholds)
    }

    fn camera_for(&self, pose: &[f64]) -> Result<CameraView, ApiError> {
        if pose.len() != 12 {
            return Err(ApiError::bad_request(format!("pose needs 12 floats, got {}", pose.len())));
        }
        self.camera.with_pose12(pose).map_err(|e| ApiError::unprocessable(e.to_string()))
    }

    fn render(&self, cam: &CameraView, opts: &RenderOptions) -> Result<RenderOutput, ApiError> {
        render_with(&self.field, cam, opts).map_err(|e| self.internal(e))
    }

    fn internal(&self, e: impl std::fmt::Display) -> ApiError {
        let id = format!("diag-{:06}", self.errors.fetch_add(1, Ordering::Relaxed) + 1);
        log::error!("{id}: {e}");
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, message: e.to_string(), diagnostic_id: Some(id) }
    }

    fn label_set(&self, id: &str) -> Result<&LabelSet, ApiError> {
        match (&self.labels, id) {
            (Some(l), "default") => Ok(l),
            _ => Err(ApiError::not_found(format!("unknown label set {id:?}"))),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub diagnostic_id: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), diagnostic_id: None }
    }

    fn bad_request(m: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, m)
    }

    fn not_found(m: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, m)
    }

    fn unprocessable(m: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, m)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message, diagnostic_id: self.diagnostic_id })).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        match e.status() {
            StatusCode::PAYLOAD_TOO_LARGE => ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, e.body_text()),
            _ => ApiError::bad_request(e.body_text()),
        }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

type Shared = Arc<AppState>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

fn png_b64(t: &Tensor<f32>, gray: bool, state: &AppState) -> Result<String, ApiError> {
    let bytes = if gray { encode_gray_png(t) } else { encode_png(t) }.map_err(|e| state.internal(e))?;
    Ok(B64.encode(bytes))
}

async fn meta(State(s): State<Shared>) -> Json<SceneMeta> {
    let c = &s.camera;
    let m = &s.scene.manifest;
    let views = s
        .scene
        .views
        .iter()
        .map(|v| ViewMeta {
            name: v.name.clone(),
            split: match v.split {
                Split::Train => "train".into(),
                Split::Heldout => "heldout".into(),
            },
            pose: v.camera.pose12().to_vec(),
        })
        .collect();
    let label_sets = s
        .labels
        .iter()
        .map(|l| LabelSetMeta { id: "default".into(), names: l.names().to_vec() })
        .collect();
    Json(SceneMeta {
        width: c.width,
        height: c.height,
        intrinsics: c.intrinsics.iter().flatten().copied().collect(),
        near: m.near,
        far: m.far,
        gaussians: s.field.len(),
        latent_dim: s.field.latent_dim,
        seg_dim: s.field.seg_dim(),
        lang_dim: s.field.lang_dim(),
        thresholds: s.thresholds,
        views,
        label_sets,
    })
}

#[derive(Debug, Deserialize)]
struct PoseQuery {
    pose: String,
}

async fn render_handler(State(s): State<Shared>, q: Result<Query<PoseQuery>, QueryRejection>) -> Result<Json<RenderResponse>, ApiError> {
    let Query(q) = q?;
    let pose = parse_pose(&q.pose).map_err(ApiError::bad_request)?;
    blocking(move || {
        let cam = s.camera_for(&pose)?;
        let out = s.render(&cam, &RenderOptions::color_only())?;
        Ok(Json(RenderResponse {
            width: cam.width,
            height: cam.height,
            image_png: png_b64(&out.color, false, &s)?,
            alpha_png: png_b64(&out.alpha, true, &s)?,
            depth_png: png_b64(&depth_preview(&out, cam.near, cam.far), true, &s)?,
        }))
    })
    .await
}

/// Mean surface depth per pixel mapped to `[0, 1]`, near bright.
pub fn depth_preview(out: &RenderOutput, near: f64, far: f64) -> Tensor<f32> {
    let data = out
        .depth
        .data()
        .iter()
        .zip(out.alpha.data())
        .map(|(&d, &a)| {
            if a < NO_SURFACE_ALPHA {
                return 0.0;
            }
            let z = (d / a) as f64;
            (1.0 - (z - near) / (far - near)).clamp(0.0, 1.0) as f32
        })
        .collect();
    Tensor::new(out.alpha.dims().to_vec(), data).expect("sized")
}

#[derive(Debug, Deserialize)]
struct PcaQuery {
    head: String,
    pose: String,
}

async fn pca_handler(State(s): State<Shared>, q: Result<Query<PcaQuery>, QueryRejection>) -> Result<Response, ApiError> {
    let Query(q) = q?;
    let pose = parse_pose(&q.pose).map_err(ApiError::bad_request)?;
    let lang = match q.head.as_str() {
        "seg" => false,
        "lang" => true,
        h => return Err(ApiError::bad_request(format!("head must be seg or lang, got {h:?}"))),
    };
    let bytes = blocking(move || {
        if (lang && s.field.lang_dim() == 0) || (!lang && s.field.seg_dim() == 0) {
            return Err(ApiError::not_found(format!("field has no {} head", q.head)));
        }
        let cam = s.camera_for(&pose)?;
        let opts = RenderOptions { seg: !lang, lang, ..Default::default() };
        let out = s.render(&cam, &opts)?;
        let feat = if lang { &out.feat_lang } else { &out.feat_seg };
        let img = pca_project(feat).map_err(|e| s.internal(e))?;
        encode_png(&img).map_err(|e| s.internal(e))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn prompt_handler(State(s): State<Shared>, body: Result<Json<PromptRequest>, JsonRejection>) -> Result<Json<PromptResponse>, ApiError> {
    let Json(req) = body?;
    blocking(move || {
        let cam = s.camera_for(&req.pose)?;
        let [x, y] = req.pixel;
        if x < 0 || y < 0 || x as usize >= cam.width || y as usize >= cam.height {
            return Err(ApiError::unprocessable(format!("pixel ({x}, {y}) outside {}x{}", cam.width, cam.height)));
        }
        let (x, y) = (x as usize, y as usize);
        let thresholds = req.thresholds.unwrap_or(s.thresholds);
        let out = s.render(&cam, &RenderOptions { seg: true, lang: false, ..Default::default() })?;
        let (h, w) = (cam.height, cam.width);
        let levels = ["small", "medium", "large"];
        let empty = |k: usize| PromptMask {
            level: levels[k].into(),
            threshold: thresholds[k],
            area: 0,
            confidence: 0.0,
            rle: Rle::encode(&vec![false; h * w], h, w),
        };
        let alpha = out.alpha.data()[y * w + x];
        let zero_feature = out.feat_seg.pixel(y, x).iter().all(|&v| v == 0.0);
        if alpha < NO_SURFACE_ALPHA || zero_feature {
            return Ok(Json(PromptResponse { width: w, height: h, no_surface: true, masks: (0..3).map(empty).collect() }));
        }
        let pm = prompt_segment(&out.feat_seg, y, x, thresholds).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        let masks = (0..3)
            .map(|k| PromptMask {
                level: levels[k].into(),
                threshold: thresholds[k],
                area: pm.area(k),
                confidence: pm.confidence[k],
                rle: Rle::encode(&pm.masks[k], h, w),
            })
            .collect();
        Ok(Json(PromptResponse { width: w, height: h, no_surface: false, masks }))
    })
    .await
}

/// Colors a label-index map and counts pixels per label.
pub fn label_map_image(labels: &Tensor<f32>, names: &[String]) -> (Tensor<f32>, Vec<LegendEntry>) {
    let mut counts = vec![0usize; names.len()];
    let mut rgb = Vec::with_capacity(labels.len() * 3);
    for &l in labels.data() {
        let k = l as usize;
        counts[k] += 1;
        rgb.extend(label_color(k).map(|c| c as f32 / 255.0));
    }
    let (h, w) = (labels.dims()[0], labels.dims()[1]);
    let legend = names
        .iter()
        .enumerate()
        .map(|(index, name)| LegendEntry { index, name: name.clone(), color: label_color(index), pixels: counts[index] })
        .collect();
    (Tensor::new(vec![h, w, 3], rgb).expect("sized"), legend)
}

async fn query_handler(State(s): State<Shared>, body: Result<Json<QueryRequest>, JsonRejection>) -> Result<Json<QueryResponse>, ApiError> {
    let Json(req) = body?;
    blocking(move || {
        let custom;
        let labels = match (&req.embeddings, &req.label_set) {
            (Some(list), _) => {
                if list.is_empty() {
                    return Err(ApiError::unprocessable("embeddings list is empty"));
                }
                let dim = s.field.lang_dim();
                if let Some(e) = list.iter().find(|e| e.embedding.len() != dim) {
                    return Err(ApiError::unprocessable(format!("embedding {:?} has {} dims, field uses {dim}", e.name, e.embedding.len())));
                }
                let names = list.iter().map(|e| e.name.clone()).collect();
                let data = list.iter().flat_map(|e| e.embedding.iter().copied()).collect();
                let emb = Tensor::new(vec![list.len(), dim], data).map_err(|e| ApiError::unprocessable(e.to_string()))?;
                custom = LabelSet::new(names, emb).map_err(|e| ApiError::unprocessable(e.to_string()))?;
                &custom
            }
            (None, Some(id)) => s.label_set(id)?,
            (None, None) => s.label_set("default")?,
        };
        let cam = s.camera_for(&req.pose)?;
        let out = s.render(&cam, &RenderOptions { seg: false, lang: true, ..Default::default() })?;
        let seg = open_vocab_segment(&out.feat_lang, labels).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        let (img, legend) = label_map_image(&seg.labels, labels.names());
        Ok(Json(QueryResponse { width: cam.width, height: cam.height, label_map_png: png_b64(&img, false, &s)?, legend }))
    })
    .await
}

async fn not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/scene/meta", get(meta))
        .route("/render", get(render_handler))
        .route("/pca", get(pca_handler))
        .route("/prompt", post(prompt_handler))
        .route("/query", post(query_handler))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(cfg: ServiceConfig) -> Result<(), Box<dyn std::error::Error>> {
    cfg.validate()?;
    let state = Arc::new(AppState::load(&cfg)?);
    let listener = tokio::net::TcpListener::bind(cfg.bind).await?;
    log::info!("serving {} on http://{}", cfg.scene_dir.display(), listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
