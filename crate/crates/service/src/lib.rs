//! JSON over HTTP for the layout studio: sampling, composition previews and
//! font listing against an immutable model snapshot.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::CorsLayer;

use logoforge_core::corpus::{FontRegistry, DEFAULT_FONT};
use logoforge_core::layout::{LayoutFile, LayoutParams, CANVAS_SIZE, MAX_GLYPHS};
use logoforge_core::model::LayoutModel;
use logoforge_core::sampling::{self, SampleError};

/// Largest `k` accepted by `/api/sample`.
pub const MAX_K: usize = 16;
const CANVAS: (usize, usize) = (CANVAS_SIZE, CANVAS_SIZE);

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    BadRequest(String),
    #[error("no model loaded")]
    NoModel,
    #[error("{0}")]
    Internal(String),
}

impl From<SampleError> for ApiError {
    fn from(e: SampleError) -> Self {
        match e {
            SampleError::Model(m) => ApiError::Internal(m.to_string()),
            other => ApiError::BadRequest(other.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::NoModel => StatusCode::SERVICE_UNAVAILABLE,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

/// Swappable handle to the served model. Requests clone the `Arc` and keep
/// using that snapshot even if a reload lands mid-request.
#[derive(Default)]
pub struct Snapshot {
    model: RwLock<Option<Arc<LayoutModel>>>,
}

impl Snapshot {
    pub fn new(model: Option<LayoutModel>) -> Self {
        Self {
            model: RwLock::new(model.map(Arc::new)),
        }
    }

    pub fn current(&self) -> Option<Arc<LayoutModel>> {
        self.model.read().expect("snapshot lock poisoned").clone()
    }

    /// Atomically replaces the served model; returns the previous one.
    pub fn replace(&self, model: LayoutModel) -> Option<Arc<LayoutModel>> {
        self.model.write().expect("snapshot lock poisoned").replace(Arc::new(model))
    }
}

pub struct AppState {
    pub snapshot: Snapshot,
    pub fonts: FontRegistry,
}

impl AppState {
    pub fn new(model: Option<LayoutModel>, fonts: FontRegistry) -> Arc<Self> {
        Arc::new(Self {
            snapshot: Snapshot::new(model),
            fonts,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lock {
    pub index: usize,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleRequest {
    pub text: String,
    #[serde(default)]
    pub font_id: Option<String>,
    pub k: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub locks: Vec<Lock>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CandidateBody {
    pub layout: LayoutFile,
    pub preview_png_b64: String,
    /// Mean of the two discriminator probabilities.
    pub score: f64,
    pub seq_score: f64,
    pub img_score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleResponse {
    pub candidates: Vec<CandidateBody>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComposeRequest {
    pub text: String,
    #[serde(default)]
    pub font_id: Option<String>,
    pub layout: LayoutFile,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComposeResponse {
    pub png_b64: String,
    /// Hard overlap in pixels.
    pub overlap: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub n_max: usize,
    pub model_loaded: bool,
    pub version: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FontsResponse {
    pub fonts: Vec<String>,
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn font<'a>(state: &'a AppState, font_id: &'a Option<String>) -> Result<&'a str, ApiError> {
    let id = font_id.as_deref().unwrap_or(DEFAULT_FONT);
    if state.fonts.get(id).is_none() {
        return Err(ApiError::BadRequest(format!("unknown font '{id}'")));
    }
    Ok(id)
}

/// Synchronous body of `/api/sample`.
pub fn sample(state: &AppState, req: &SampleRequest) -> Result<SampleResponse, ApiError> {
    if req.k == 0 || req.k > MAX_K {
        return Err(ApiError::BadRequest(format!("k must be between 1 and {MAX_K}")));
    }
    let font_id = font(state, &req.font_id)?;
    let prepared = sampling::prepare_text(&state.fonts, font_id, &req.text)?;
    let model = state.snapshot.current().ok_or(ApiError::NoModel)?;
    let locks: Vec<(usize, LayoutParams)> = req
        .locks
        .iter()
        .map(|l| (l.index, LayoutParams::from_array(l.bbox)))
        .collect();
    let candidates = sampling::sample_candidates(&model, &prepared, req.k, req.seed.unwrap_or(0), &locks)?;
    Ok(SampleResponse {
        candidates: candidates
            .iter()
            .map(|c| CandidateBody {
                layout: LayoutFile::from_sequence(&c.layout, CANVAS),
                preview_png_b64: b64(&sampling::png_bytes(&c.logo)),
                score: c.score(),
                seq_score: c.seq_score,
                img_score: c.img_score,
            })
            .collect(),
    })
}

/// Synchronous body of `/api/compose`.
pub fn compose(state: &AppState, req: &ComposeRequest) -> Result<ComposeResponse, ApiError> {
    let font_id = font(state, &req.font_id)?;
    let prepared = sampling::prepare_text(&state.fonts, font_id, &req.text)?;
    if req.layout.canvas != [CANVAS.0, CANVAS.1] {
        return Err(ApiError::BadRequest(format!(
            "canvas must be {}x{}",
            CANVAS.0, CANVAS.1
        )));
    }
    let layout = req.layout.to_sequence();
    if layout.len() != prepared.units.len() {
        return Err(ApiError::BadRequest(format!(
            "layout has {} boxes but the text has {} glyph units",
            layout.len(),
            prepared.units.len()
        )));
    }
    layout
        .check_range(CANVAS)
        .map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let rasters = prepared.rasters();
    let logo = sampling::compose(&rasters, &layout)?;
    Ok(ComposeResponse {
        png_b64: b64(&sampling::png_bytes(&logo)),
        overlap: sampling::layout_overlap(&rasters, &layout),
    })
}

pub fn health(state: &AppState) -> HealthResponse {
    HealthResponse {
        status: "ok".into(),
        n_max: MAX_GLYPHS,
        model_loaded: state.snapshot.current().is_some(),
        version: env!("CARGO_PKG_VERSION").into(),
    }
}

pub fn fonts(state: &AppState) -> FontsResponse {
    FontsResponse {
        fonts: state.fonts.ids().into_iter().map(String::from).collect(),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn sample_handler(
    State(state): State<Arc<AppState>>,
    body: Result<Json<SampleRequest>, JsonRejection>,
) -> Result<Json<SampleResponse>, ApiError> {
    let Json(req) = body?;
    blocking(move || sample(&state, &req)).await.map(Json)
}

async fn compose_handler(
    State(state): State<Arc<AppState>>,
    body: Result<Json<ComposeRequest>, JsonRejection>,
) -> Result<Json<ComposeResponse>, ApiError> {
    let Json(req) = body?;
    blocking(move || compose(&state, &req)).await.map(Json)
}

async fn health_handler(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(health(&state))
}

async fn fonts_handler(State(state): State<Arc<AppState>>) -> Json<FontsResponse> {
    Json(fonts(&state))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/sample", post(sample_handler))
        .route("/api/compose", post(compose_handler))
        .route("/api/health", get(health_handler))
        .route("/api/fonts", get(fonts_handler))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
