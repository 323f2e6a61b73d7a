//! HTTP editing service.
//!
//! `POST /v1/edit` accepts either JSON (`image` as base64 PNG, `valence`,
//! `arousal`, optional `grid`) or multipart form data with the same field
//! names (`image` as raw file bytes). The response is JSON with the edited
//! PNG in `image` (base64), the echoed label, `model_version`,
//! `latency_ms`, and a `source_id` naming the aligned input.
//! `GET /v1/grid?source=..&v=..&a=..` returns a PNG montage of edits of a
//! recently uploaded source around a label. `GET /v1/health` reports the
//! model version and uptime.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use caae_core::affect::{encode_png, encode_rgb_png, ImageTensor};
use caae_core::evalkit::LabelGrid;
use caae_core::networks::Caae;
use caae_core::training::{load_model, model_version};
use caae_core::{EmotionLabel, Error as CoreError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::pipeline::{edit_grid, edit_one, prepare_image};

/// Largest accepted encoded image.
pub const MAX_IMAGE_BYTES: usize = 8 * 1024 * 1024;
/// Request bodies may carry the image as base64 plus form overhead.
const MAX_BODY_BYTES: usize = MAX_IMAGE_BYTES / 3 * 4 + 64 * 1024;
/// Sources kept for `/v1/grid`, oldest evicted first.
const SOURCE_CACHE: usize = 32;
const DEFAULT_GRID: usize = 7;
const DEFAULT_GRID_SPAN: f64 = 0.5;

pub struct AppState {
    model: Caae<f32>,
    version: String,
    step: u64,
    started: Instant,
    sources: Mutex<Vec<(String, ImageTensor)>>,
}

impl AppState {
    pub fn new(model: Caae<f32>, version: String, step: u64) -> Self {
        Self {
            model,
            version,
            step,
            started: Instant::now(),
            sources: Mutex::new(Vec::new()),
        }
    }

    pub fn load(checkpoint: &Path) -> caae_core::Result<Self> {
        let loaded = load_model::<f32>(checkpoint)?;
        Ok(Self::new(loaded.model, loaded.version, loaded.step))
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    fn remember(&self, image: &ImageTensor) -> String {
        let bytes: Vec<u8> = image.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let id = model_version(&bytes);
        let mut sources = self.sources.lock().expect("source cache poisoned");
        if !sources.iter().any(|(k, _)| *k == id) {
            if sources.len() == SOURCE_CACHE {
                sources.remove(0);
            }
            sources.push((id.clone(), image.clone()));
        }
        id
    }

    fn source(&self, id: &str) -> Option<ImageTensor> {
        let sources = self.sources.lock().expect("source cache poisoned");
        sources.iter().find(|(k, _)| k == id).map(|(_, img)| img.clone())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/edit", post(edit))
        .route("/v1/grid", get(grid))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Loads the checkpoint, then serves until interrupted.
pub async fn serve(checkpoint: &Path, bind: SocketAddr) -> anyhow::Result<()> {
    let state = Arc::new(AppState::load(checkpoint)?);
    let listener = tokio::net::TcpListener::bind(bind).await?;
    eprintln!("serving model {} on http://{}", state.version, listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    field: Option<&'static str>,
    message: String,
}

impl ApiError {
    fn bad(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            field: Some(field),
            message: message.into(),
        }
    }

    fn internal(err: impl std::fmt::Display) -> Self {
        let id = uuid::Uuid::new_v4().to_string();
        eprintln!("internal error {id}: {err}");
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            field: None,
            message: format!("internal error {id}"),
        }
    }

    fn from_image(err: CoreError) -> Self {
        match err {
            e @ (CoreError::Image(_) | CoreError::ImageTooSmall { .. } | CoreError::Format(_)) => {
                Self::bad("image", e.to_string())
            }
            e => Self::internal(e),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "field": self.field, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    model_version: String,
    step: u64,
    image_size: usize,
    uptime_s: f64,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok",
        model_version: state.version.clone(),
        step: state.step,
        image_size: state.model.config.image_size,
        uptime_s: state.started.elapsed().as_secs_f64(),
    })
}

/// A decoded `POST /v1/edit` body.
struct EditRequest {
    image: Vec<u8>,
    label: EmotionLabel,
    grid: bool,
}

#[derive(Serialize, Deserialize)]
pub struct EditResponse {
    pub image: String,
    pub valence: f32,
    pub arousal: f32,
    pub grid: bool,
    pub model_version: String,
    pub source_id: String,
    pub latency_ms: f64,
}

fn check_size(image: &[u8]) -> Result<(), ApiError> {
    if image.len() > MAX_IMAGE_BYTES {
        return Err(ApiError {
            status: StatusCode::PAYLOAD_TOO_LARGE,
            field: Some("image"),
            message: format!("image is {} bytes, limit is {MAX_IMAGE_BYTES}", image.len()),
        });
    }
    Ok(())
}

fn label_component(field: &'static str, v: Option<f64>) -> Result<f32, ApiError> {
    let v = v.ok_or_else(|| ApiError::bad(field, format!("{field} is required")))?;
    if !(v.is_finite() && (-1.0..=1.0).contains(&v)) {
        return Err(ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            field: Some(field),
            message: format!("{field} = {v} is outside [-1, 1]"),
        });
    }
    Ok(v as f32)
}

fn number(field: &'static str, v: &Value) -> Result<Option<f64>, ApiError> {
    match v {
        Value::Null => Ok(None),
        Value::Number(n) => Ok(n.as_f64()),
        _ => Err(ApiError::bad(field, format!("{field} must be a number"))),
    }
}

fn parse_json(body: &[u8]) -> Result<EditRequest, ApiError> {
    let v: Value = serde_json::from_slice(body).map_err(|e| ApiError::bad("body", format!("invalid JSON: {e}")))?;
    if !v.is_object() {
        return Err(ApiError::bad("body", "expected a JSON object"));
    }
    let encoded = v["image"]
        .as_str()
        .ok_or_else(|| ApiError::bad("image", "image must be a base64 string"))?;
    let image = BASE64
        .decode(encoded)
        .map_err(|e| ApiError::bad("image", format!("image is not valid base64: {e}")))?;
    check_size(&image)?;
    let valence = label_component("valence", number("valence", &v["valence"])?)?;
    let arousal = label_component("arousal", number("arousal", &v["arousal"])?)?;
    let grid = match &v["grid"] {
        Value::Null => false,
        Value::Bool(b) => *b,
        _ => return Err(ApiError::bad("grid", "grid must be a boolean")),
    };
    Ok(EditRequest {
        image,
        label: EmotionLabel::new(valence, arousal).expect("validated"),
        grid,
    })
}

async fn parse_multipart(mut form: Multipart) -> Result<EditRequest, ApiError> {
    let (mut image, mut valence, mut arousal, mut grid) = (None, None, None, false);
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::bad("body", format!("malformed multipart body: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad("body", format!("malformed multipart body: {e}")))?;
        let text = || String::from_utf8_lossy(&bytes).trim().to_string();
        let num = |field: &'static str| {
            text()
                .parse::<f64>()
                .map_err(|_| ApiError::bad(field, format!("{field} must be a number")))
        };
        match name.as_str() {
            "image" => image = Some(bytes.to_vec()),
            "valence" => valence = Some(num("valence")?),
            "arousal" => arousal = Some(num("arousal")?),
            "grid" => {
                grid = match text().as_str() {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => return Err(ApiError::bad("grid", "grid must be true or false")),
                }
            }
            _ => {}
        }
    }
    let image = image.ok_or_else(|| ApiError::bad("image", "image is required"))?;
    check_size(&image)?;
    let valence = label_component("valence", valence)?;
    let arousal = label_component("arousal", arousal)?;
    Ok(EditRequest {
        image,
        label: EmotionLabel::new(valence, arousal).expect("validated"),
        grid,
    })
}

async fn edit(State(state): State<Arc<AppState>>, headers: HeaderMap, req: Request) -> Result<Response, ApiError> {
    let started = Instant::now();
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default();
    let request = if content_type.starts_with("multipart/form-data") {
        let form = Multipart::from_request(req, &state)
            .await
            .map_err(|e| ApiError::bad("body", e.body_text()))?;
        parse_multipart(form).await?
    } else if content_type.starts_with("application/json") {
        let body = axum::body::to_bytes(req.into_body(), MAX_BODY_BYTES)
            .await
            .map_err(|_| ApiError {
                status: StatusCode::PAYLOAD_TOO_LARGE,
                field: Some("image"),
                message: format!("request body exceeds {MAX_BODY_BYTES} bytes"),
            })?;
        parse_json(&body)?
    } else {
        return Err(ApiError::bad(
            "body",
            "content type must be application/json or multipart/form-data",
        ));
    };
    let worker = Arc::clone(&state);
    let (png, source_id) = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let size = worker.model.config.image_size;
        let img = prepare_image(&request.image, size).map_err(ApiError::from_image)?;
        let id = worker.remember(&img);
        let png = if request.grid {
            let grid = LabelGrid::full(DEFAULT_GRID).map_err(ApiError::internal)?;
            edit_grid(&worker.model, &img, &grid).and_then(|m| encode_rgb_png(&m))
        } else {
            edit_one(&worker.model, &img, request.label).and_then(|e| encode_png(&e))
        };
        Ok((png.map_err(ApiError::internal)?, id))
    })
    .await
    .map_err(ApiError::internal)??;
    let response = EditResponse {
        image: BASE64.encode(png),
        valence: request.label.valence(),
        arousal: request.label.arousal(),
        grid: request.grid,
        model_version: state.version.clone(),
        source_id,
        latency_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok(Json(response).into_response())
}

#[derive(Deserialize)]
struct GridQuery {
    source: Option<String>,
    v: Option<String>,
    a: Option<String>,
    span: Option<String>,
    n: Option<String>,
}

fn query_number(field: &'static str, raw: &Option<String>) -> Result<Option<f64>, ApiError> {
    raw.as_deref()
        .map(|s| s.parse::<f64>().map_err(|_| ApiError::bad(field, format!("{field} must be a number"))))
        .transpose()
}

async fn grid(State(state): State<Arc<AppState>>, Query(q): Query<GridQuery>) -> Result<Response, ApiError> {
    let id = q.source.as_deref().ok_or_else(|| ApiError::bad("source", "source is required"))?;
    let source = state.source(id).ok_or_else(|| ApiError {
        status: StatusCode::NOT_FOUND,
        field: Some("source"),
        message: format!("unknown source {id}; upload it with POST /v1/edit first"),
    })?;
    let v = label_component("v", Some(query_number("v", &q.v)?.unwrap_or(0.0)))?;
    let a = label_component("a", Some(query_number("a", &q.a)?.unwrap_or(0.0)))?;
    let span = query_number("span", &q.span)?.unwrap_or(DEFAULT_GRID_SPAN);
    let n = match &q.n {
        None => DEFAULT_GRID,
        Some(s) => match s.parse::<usize>() {
            Ok(n) if (2..=15).contains(&n) => n,
            _ => return Err(ApiError::bad("n", "n must be an integer in [2, 15]")),
        },
    };
    let grid = LabelGrid::around(n, [v as f64, a as f64], span).map_err(|e| ApiError::bad("span", e.to_string()))?;
    let worker = Arc::clone(&state);
    let png = tokio::task::spawn_blocking(move || edit_grid(&worker.model, &source, &grid).and_then(|m| encode_rgb_png(&m)))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::internal)?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png".to_string()),
            (header::HeaderName::from_static("x-model-version"), state.version.clone()),
        ],
        png,
    )
        .into_response())
}
