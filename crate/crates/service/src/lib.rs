//! HTTP front end over an immutable feature index and encoder.
//!
//! Endpoints live under `/api`:
//!
//! | method | path | purpose |
//! |---|---|---|
//! | POST | `/api/queries` | multipart `print` (PNG) + `request` (JSON), returns ranked models |
//! | GET | `/api/queries/{id}` | re-fetch a recent response |
//! | POST | `/api/masks/rasterize` | echo a mask shape as a PNG |
//! | POST | `/api/prints/place` | echo the placed print as a PNG |
//! | GET | `/api/models/{model_id}` | instances of a model |
//! | GET | `/api/images/{instance_id}/{kind}` | stored depth or print PNG |
//! | GET | `/api/health` | liveness and index summary |

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;
use treadmatch::config::ServiceSection;
use treadmatch::dataset::DatasetManifest;
use treadmatch::exec::Execution;
use treadmatch::retrieval::{query, RetrievalConfig};
use treadmatch::{Encoder, FeatureIndex, Frame, Image, QuerySpec};

mod cache;
pub mod shapes;

pub use cache::LruCache;
pub use shapes::{AlignmentTransform, MaskShape, ShapeError};

/// Loaded artifacts plus per-process bookkeeping.
pub struct ServiceState {
    pub index: Option<Arc<FeatureIndex>>,
    pub encoder: Option<Arc<Encoder>>,
    /// Source of the images served by `/api/images`.
    pub manifest: Option<Arc<DatasetManifest>>,
    pub settings: ServiceSection,
    pub retrieval: RetrievalConfig,
    cache: Mutex<LruCache<String>>,
    next_id: AtomicU64,
}

impl ServiceState {
    pub fn new(
        index: Option<FeatureIndex>,
        encoder: Option<Encoder>,
        manifest: Option<DatasetManifest>,
        settings: ServiceSection,
        retrieval: RetrievalConfig,
    ) -> Self {
        Self {
            index: index.map(Arc::new),
            encoder: encoder.map(Arc::new),
            manifest: manifest.map(Arc::new),
            cache: Mutex::new(LruCache::new(settings.cache_capacity.max(1))),
            settings,
            retrieval,
            next_id: AtomicU64::new(1),
        }
    }

    fn frame(&self) -> Frame {
        self.encoder.as_ref().map_or_else(Frame::default, |e| e.frame())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message, "status": self.status.as_u16()}))).into_response()
    }
}

impl From<ShapeError> for ApiError {
    fn from(e: ShapeError) -> Self {
        Self::bad_request(e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// The JSON part of a query upload.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub mask: MaskShape,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub transform: AlignmentTransform,
    /// Only rasterize and report coverage; no retrieval.
    #[serde(default)]
    pub dry_run: bool,
    #[serde(default)]
    pub query_id: Option<String>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterizeRequest {
    pub mask: MaskShape,
}

pub fn router(state: Arc<ServiceState>) -> Router {
    let limit = state.settings.max_upload_bytes;
    let static_dir = state.settings.static_dir.clone();
    let mut app = Router::new()
        .route("/api/queries", post(post_query))
        .route("/api/queries/:id", get(get_query))
        .route("/api/masks/rasterize", post(rasterize))
        .route("/api/prints/place", post(place_print))
        .route("/api/models/:model_id", get(get_model))
        .route("/api/images/:instance_id/:kind", get(get_image))
        .route("/api/health", get(health))
        .layer(DefaultBodyLimit::max(limit))
        .layer(CorsLayer::permissive())
        .with_state(state);
    if let Some(dir) = static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app
}

pub async fn serve(state: Arc<ServiceState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

struct Upload {
    print: Option<Vec<u8>>,
    json: Option<String>,
}

async fn read_multipart(mut mp: Multipart, json_field: &str) -> ApiResult<Upload> {
    let mut up = Upload { print: None, json: None };
    loop {
        let field = mp.next_field().await.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        let Some(field) = field else { break };
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        if name == "print" {
            up.print = Some(data.to_vec());
        } else if name == json_field {
            up.json = Some(String::from_utf8(data.to_vec()).map_err(|_| ApiError::bad_request("request is not UTF-8"))?);
        } else {
            return Err(ApiError::bad_request(format!("unexpected multipart field {name:?}")));
        }
    }
    Ok(up)
}

fn decode_print(bytes: Option<Vec<u8>>) -> ApiResult<Image> {
    let bytes = bytes.ok_or_else(|| ApiError::bad_request("missing multipart field \"print\""))?;
    Image::from_png_bytes(&bytes).map_err(|e| ApiError::bad_request(format!("print is not a readable PNG: {e}")))
}

async fn post_query(State(state): State<Arc<ServiceState>>, mp: Multipart) -> ApiResult<Response> {
    let started = Instant::now();
    let (Some(index), Some(encoder)) = (state.index.clone(), state.encoder.clone()) else {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "index not loaded"));
    };
    let up = read_multipart(mp, "request").await?;
    let req: QueryRequest = serde_json::from_str(up.json.as_deref().ok_or_else(|| ApiError::bad_request("missing multipart field \"request\""))?)
        .map_err(|e| ApiError::bad_request(format!("invalid request: {e}")))?;
    let k = req.k.unwrap_or(state.retrieval.k);
    if k == 0 || k > state.settings.max_k {
        return Err(ApiError::bad_request(format!("k must be between 1 and {}", state.settings.max_k)));
    }
    req.transform.validate()?;
    let frame = encoder.frame();
    let mask = req.mask.rasterize(frame)?;
    let (_, hf, wf) = encoder.feature_shape();
    let cells = mask.cells(hf, wf).map_err(|e| ApiError::bad_request(e.to_string()))?;
    if req.dry_run {
        let grid: Vec<Vec<bool>> = cells.cells.chunks(wf).map(|r| r.to_vec()).collect();
        return Ok(Json(json!({
            "covered_cells": cells.covered(),
            "visible_pixels": mask.visible_count(),
            "cells": grid,
        }))
        .into_response());
    }
    if cells.covered() == 0 {
        return Err(ApiError::bad_request("mask covers no feature cell"));
    }
    let upload = decode_print(up.print)?;
    let query_id = req.query_id.clone().unwrap_or_else(|| format!("q{:06}", state.next_id.fetch_add(1, Ordering::Relaxed)));
    let retrieval = state.retrieval.clone();
    let transform = req.transform;
    let qid = query_id.clone();
    let result = tokio::task::spawn_blocking(move || {
        let print = transform.apply(&upload, frame);
        let spec = QuerySpec { query_id: qid, print, mask, k };
        query(&index, &encoder, &spec, &retrieval, Execution::Parallel)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let timing_ms = started.elapsed().as_secs_f64() * 1e3;
    let body = result.to_json_with(&[("timing_ms", json!((timing_ms * 1e3).round() / 1e3))]);
    state.cache.lock().expect("cache lock").insert(query_id, body.clone());
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

async fn get_query(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let body = state.cache.lock().expect("cache lock").get(&id);
    match body {
        Some(b) => Ok(([(header::CONTENT_TYPE, "application/json")], b).into_response()),
        None => Err(ApiError::not_found(format!("no recent query {id}"))),
    }
}

async fn rasterize(State(state): State<Arc<ServiceState>>, Json(req): Json<RasterizeRequest>) -> ApiResult<Response> {
    let mask = req.mask.rasterize(state.frame())?;
    Ok(png_response(mask.to_image().to_png_bytes()))
}

async fn place_print(State(state): State<Arc<ServiceState>>, mp: Multipart) -> ApiResult<Response> {
    let up = read_multipart(mp, "transform").await?;
    let transform: AlignmentTransform = match up.json.as_deref() {
        Some(s) => serde_json::from_str(s).map_err(|e| ApiError::bad_request(format!("invalid transform: {e}")))?,
        None => AlignmentTransform::default(),
    };
    transform.validate()?;
    let upload = decode_print(up.print)?;
    Ok(png_response(transform.apply(&upload, state.frame()).to_png_bytes()))
}

async fn get_model(State(state): State<Arc<ServiceState>>, Path(model_id): Path<String>) -> ApiResult<Response> {
    let index = state.index.as_ref().ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "index not loaded"))?;
    let instances: Vec<_> = index
        .entries()
        .iter()
        .filter(|e| e.model_id == model_id)
        .map(|e| {
            json!({
                "instance_id": e.instance_id,
                "depth_url": format!("/api/images/{}/depth", e.instance_id),
                "print_url": format!("/api/images/{}/print", e.instance_id),
            })
        })
        .collect();
    if instances.is_empty() {
        return Err(ApiError::not_found(format!("unknown model {model_id}")));
    }
    Ok(Json(json!({"model_id": model_id, "instances": instances})).into_response())
}

async fn get_image(
    State(state): State<Arc<ServiceState>>,
    Path((instance_id, kind)): Path<(String, String)>,
) -> ApiResult<Response> {
    let manifest = state.manifest.as_ref().ok_or_else(|| ApiError::not_found("no image source configured"))?;
    let entry = manifest
        .entries
        .iter()
        .find(|e| e.instance_id == instance_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown instance {instance_id}")))?;
    let rel = match kind.as_str() {
        "depth" => &entry.depth_path,
        "print" => &entry.print_path,
        _ => return Err(ApiError::not_found(format!("unknown image kind {kind}"))),
    };
    let path = manifest.resolve(rel);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("{}: {e}", path.display())))?;
    Ok(png_response(bytes))
}

async fn health(State(state): State<Arc<ServiceState>>) -> Json<serde_json::Value> {
    let ready = state.index.is_some() && state.encoder.is_some();
    Json(json!({
        "status": if ready { "ok" } else { "unavailable" },
        "index_count": state.index.as_ref().map_or(0, |i| i.len()),
        "encoder_hash": state.encoder.as_ref().map(|e| hex::encode(e.fingerprint())),
    }))
}
