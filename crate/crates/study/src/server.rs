use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::stats::summary_csv;
use crate::store::StudyStore;
use crate::{ItemAspect, Rating, StudyError};

type Shared = Arc<StudyStore>;

const PLACEHOLDER: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>Aspect rating study</title></head>\n<body><h1>Aspect rating study</h1><p>The rating UI is not bundled with this server. \
Start it with <code>--ui DIR</code> or use the JSON API under <code>/api</code>.</p></body></html>\n";

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let status = match e {
            StudyError::InvalidRating(_) => StatusCode::BAD_REQUEST,
            StudyError::UnknownItem(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self(status, e.to_string())
    }
}

fn unknown_item(id: &str) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, StudyError::UnknownItem(id.to_string()).to_string())
}

#[derive(Debug, Deserialize)]
struct RaterQuery {
    rater_id: Option<String>,
}

#[derive(Debug, Serialize)]
struct ItemEntry {
    item_id: String,
    rated: bool,
}

#[derive(Debug, Serialize)]
struct ItemList {
    rater_id: Option<String>,
    total: usize,
    rated: usize,
    items: Vec<ItemEntry>,
}

async fn list_items(State(store): State<Shared>, Query(q): Query<RaterQuery>) -> Json<ItemList> {
    let rater = q.rater_id.filter(|r| !r.trim().is_empty());
    let (items, done) = match &rater {
        Some(r) => (store.items_for(r), store.rated_by(r)),
        None => (store.items().iter().collect(), Vec::new()),
    };
    let items: Vec<ItemEntry> = items
        .into_iter()
        .map(|i| ItemEntry {
            rated: done.contains(&i.item_id),
            item_id: i.item_id.clone(),
        })
        .collect();
    Json(ItemList {
        rater_id: rater,
        total: items.len(),
        rated: items.iter().filter(|i| i.rated).count(),
        items,
    })
}

#[derive(Debug, Serialize)]
struct ItemView {
    item_id: String,
    /// 1-based position in this rater's order.
    position: usize,
    total: usize,
    media_type: String,
    image_url: String,
    image_data_uri: String,
    aspects: Vec<ItemAspect>,
    rating: Option<Rating>,
}

async fn get_item(
    State(store): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<RaterQuery>,
) -> Result<Json<ItemView>, ApiError> {
    let item = store.item(&id).ok_or_else(|| unknown_item(&id))?;
    let bytes = std::fs::read(store.image_path(item)).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let rater = q.rater_id.filter(|r| !r.trim().is_empty());
    let position = match &rater {
        Some(r) => store.items_for(r).iter().position(|i| i.item_id == id),
        None => store.items().iter().position(|i| i.item_id == id),
    }
    .expect("item is listed")
        + 1;
    Ok(Json(ItemView {
        position,
        total: store.items().len(),
        image_url: format!("/api/items/{id}/image"),
        image_data_uri: format!("data:{};base64,{}", item.media_type, STANDARD.encode(bytes)),
        media_type: item.media_type.clone(),
        aspects: item.aspects.clone(),
        rating: rater.and_then(|r| store.rating(&r, &id)),
        item_id: id,
    }))
}

async fn get_image(State(store): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let item = store.item(&id).ok_or_else(|| unknown_item(&id))?;
    let bytes = std::fs::read(store.image_path(item)).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, item.media_type.clone())], bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct RatingInput {
    rater_id: String,
    item_id: String,
    relevance: i64,
    diversity: i64,
    accuracy: i64,
}

fn score(name: &str, v: i64) -> Result<u8, ApiError> {
    u8::try_from(v)
        .ok()
        .filter(|s| (crate::MIN_SCORE..=crate::MAX_SCORE).contains(s))
        .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, format!("invalid rating: {name} must be an integer in 1..=5, got {v}")))
}

/// The body is parsed by hand so that every malformed request is a 400.
async fn post_rating(State(store): State<Shared>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let input: RatingInput =
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("invalid rating body: {e}")))?;
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64);
    let rating = Rating {
        relevance: score("relevance", input.relevance)?,
        diversity: score("diversity", input.diversity)?,
        accuracy: score("accuracy", input.accuracy)?,
        rater_id: input.rater_id.trim().to_string(),
        item_id: input.item_id,
        timestamp,
    };
    let replaced = store.record(rating.clone())?;
    Ok(Json(json!({ "rating": rating, "replaced": replaced })))
}

async fn get_summary(State(store): State<Shared>) -> Json<crate::StudySummary> {
    Json(store.summary())
}

async fn get_summary_csv(State(store): State<Shared>) -> Response {
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], summary_csv(&store.summary())).into_response()
}

/// API routes plus the UI: static files from `ui_dir`, or a placeholder.
pub fn router(store: Arc<StudyStore>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/items", get(list_items))
        .route("/api/items/{id}", get(get_item))
        .route("/api/items/{id}/image", get(get_image))
        .route("/api/ratings", post(post_rating))
        .route("/api/summary", get(get_summary))
        .route("/api/summary.csv", get(get_summary_csv))
        .with_state(store);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER) })),
    }
}

/// Binds and serves in the background; returns the bound address.
pub async fn spawn_study(
    store: Arc<StudyStore>,
    addr: SocketAddr,
    ui_dir: Option<PathBuf>,
) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    let app = router(store, ui_dir);
    Ok((bound, tokio::spawn(async move { axum::serve(listener, app).await })))
}

pub async fn serve_study(store: Arc<StudyStore>, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let (bound, handle) = spawn_study(store, addr, ui_dir).await?;
    tracing::info!(%bound, "study service listening");
    handle.await.map_err(std::io::Error::other)?
}
