//! HTTP front of the listening test. Clip URLs and payloads never carry
//! condition labels; only `/api/stats` and `/api/export.csv` unblind.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use prosogap::mushra::{ratings_csv, MushraError, MushraStore};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

struct AppState {
    store: MushraStore,
    bundle_dir: PathBuf,
    /// Files a client may fetch, relative to the bundle root.
    clips: BTreeSet<String>,
}

struct ApiError(MushraError);

impl From<MushraError> for ApiError {
    fn from(e: MushraError) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = match &self.0 {
            MushraError::NoTrialsLoaded => (StatusCode::SERVICE_UNAVAILABLE, "no_trials_loaded"),
            MushraError::UnknownListener(_) => (StatusCode::NOT_FOUND, "unknown_listener"),
            MushraError::UnknownTrial(_) => (StatusCode::NOT_FOUND, "unknown_trial"),
            MushraError::IncompleteRatings(_) => (StatusCode::UNPROCESSABLE_ENTITY, "incomplete_ratings"),
            MushraError::UnknownSlot(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_slot"),
            MushraError::ScoreOutOfRange(_) => (StatusCode::UNPROCESSABLE_ENTITY, "score_out_of_range"),
            MushraError::DuplicateSubmission => (StatusCode::CONFLICT, "duplicate_submission"),
            MushraError::EmptyAfterScreening => (StatusCode::CONFLICT, "empty_after_screening"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        (status, Json(serde_json::json!({ "error": code, "message": self.0.to_string() }))).into_response()
    }
}

#[derive(Serialize, Deserialize)]
pub struct SessionResponse {
    pub listener_id: String,
    pub trials: Vec<String>,
}

#[derive(Serialize, Deserialize)]
pub struct ClipRef {
    pub slot: u8,
    pub clip_url: String,
}

#[derive(Serialize, Deserialize)]
pub struct TrialResponse {
    pub trial_id: String,
    pub reference_url: String,
    pub clips: Vec<ClipRef>,
}

#[derive(Deserialize)]
struct ListenerQuery {
    listener: String,
}

#[derive(Serialize, Deserialize)]
pub struct RatingsRequest {
    pub listener_id: String,
    pub trial_id: String,
    /// Slot (as a decimal string) to score.
    pub scores: BTreeMap<String, i64>,
}

#[derive(Serialize, Deserialize)]
pub struct RatingsResponse {
    pub accepted: usize,
}

fn clip_url(file: &str) -> String {
    format!("/clips/{file}")
}

async fn create_session(State(app): State<Arc<AppState>>) -> Result<Json<SessionResponse>, ApiError> {
    let s = app.store.create_session()?;
    Ok(Json(SessionResponse { listener_id: s.listener_id, trials: s.trials }))
}

async fn trial(State(app): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<ListenerQuery>) -> Result<Json<TrialResponse>, ApiError> {
    let view = app.store.trial_view(&q.listener, &id)?;
    Ok(Json(TrialResponse {
        trial_id: view.trial_id,
        reference_url: clip_url(&view.reference),
        clips: view.clips.into_iter().map(|c| ClipRef { slot: c.slot, clip_url: clip_url(&c.file) }).collect(),
    }))
}

async fn clip(State(app): State<Arc<AppState>>, Path(path): Path<String>) -> Response {
    if !app.clips.contains(&path) {
        return StatusCode::NOT_FOUND.into_response();
    }
    match tokio::fs::read(app.bundle_dir.join(&path)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "audio/wav"), (header::CACHE_CONTROL, "no-store")], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn ratings(State(app): State<Arc<AppState>>, Json(req): Json<RatingsRequest>) -> Result<Json<RatingsResponse>, Response> {
    let mut scores = BTreeMap::new();
    for (slot, score) in req.scores {
        let slot: u8 = slot
            .parse()
            .map_err(|_| (StatusCode::UNPROCESSABLE_ENTITY, Json(serde_json::json!({ "error": "unknown_slot", "message": slot }))).into_response())?;
        scores.insert(slot, score);
    }
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let state = app.clone();
    let accepted = tokio::task::spawn_blocking(move || state.store.submit_ratings(&req.listener_id, &req.trial_id, &scores, now))
        .await
        .map_err(|_| StatusCode::INTERNAL_SERVER_ERROR.into_response())?
        .map_err(|e| ApiError(e).into_response())?;
    Ok(Json(RatingsResponse { accepted: accepted.len() }))
}

async fn stats(State(app): State<Arc<AppState>>) -> Result<Json<prosogap::mushra::MushraStats>, ApiError> {
    Ok(Json(app.store.stats()?))
}

async fn export_csv(State(app): State<Arc<AppState>>) -> impl IntoResponse {
    let csv = ratings_csv(app.store.bundle(), &app.store.ratings());
    ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv)
}

/// Routes for the listening test; `static_dir`, if given, is served at `/`.
pub fn router(store: MushraStore, bundle_dir: PathBuf, static_dir: Option<PathBuf>) -> Router {
    let clips = store.bundle().trials.iter().flat_map(|t| std::iter::once(t.reference.clone()).chain(t.clips.iter().map(|c| c.file.clone()))).collect();
    let app = Arc::new(AppState { store, bundle_dir, clips });
    let router = Router::new()
        .route("/api/session", post(create_session))
        .route("/api/trial/{id}", get(trial))
        .route("/clips/{*path}", get(clip))
        .route("/api/ratings", post(ratings))
        .route("/api/stats", get(stats))
        .route("/api/export.csv", get(export_csv))
        .with_state(app);
    match static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

/// Serves until interrupted.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
