//! HTTP/JSON routes.
//!
//! | route | |
//! |---|---|
//! | `POST /sessions` | `{"rater_id"}` → [`SessionInfo`] |
//! | `GET /sets/next?session=` | [`NextSet`] |
//! | `GET /image/{id}` | image bytes |
//! | `POST /rankings` | [`Submission`] → [`Progress`] |
//! | `GET /report` | admin bearer token; JSON, or text with `?format=text` |
//!
//! Anything else falls through to the static directory, if one is mounted.

use std::net::SocketAddr;
use std::path::PathBuf;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::error::ReviewError;
use crate::service::{Progress, SetView, SharedService, Submission};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextSet {
    Pending { set: SetView },
    Done { progress: Progress },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct OpenSession {
    pub rater_id: String,
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    session: String,
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    format: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            ReviewError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            ReviewError::UnknownSet(_) => (StatusCode::NOT_FOUND, "unknown_set"),
            ReviewError::UnknownImage(_) => (StatusCode::NOT_FOUND, "unknown_image"),
            ReviewError::DuplicateSubmission { .. } => (StatusCode::CONFLICT, "duplicate_submission"),
            ReviewError::InvalidPermutation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_permutation"),
            ReviewError::InvalidConfig(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ReviewError::EmptyStore => (StatusCode::NOT_FOUND, "empty_store"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!("{self}");
        }
        (
            status,
            Json(ErrorBody {
                error: kind.into(),
                message: self.to_string(),
            }),
        )
            .into_response()
    }
}

async fn open_session(State(svc): State<SharedService>, Json(body): Json<OpenSession>) -> Response {
    match tokio::task::spawn_blocking(move || svc.open_session(&body.rater_id)).await {
        Ok(Ok(info)) => (StatusCode::CREATED, Json(info)).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => internal(e),
    }
}

async fn next_set(State(svc): State<SharedService>, Query(q): Query<SessionQuery>) -> Response {
    match svc.next_set(&q.session) {
        Ok(Some(set)) => Json(NextSet::Pending { set }).into_response(),
        Ok(None) => {
            let state = svc.store().state();
            let completed = state.sessions[&q.session].completed.len();
            Json(NextSet::Done {
                progress: Progress {
                    completed,
                    total: svc.sets().len(),
                },
            })
            .into_response()
        }
        Err(e) => e.into_response(),
    }
}

fn content_type(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    }
}

async fn image(State(svc): State<SharedService>, Path(id): Path<String>) -> Response {
    let path = match svc.image_path(&id) {
        Ok(p) => p.clone(),
        Err(e) => return e.into_response(),
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => (
            [
                (header::CONTENT_TYPE, content_type(&path)),
                (header::CACHE_CONTROL, "private, max-age=3600"),
            ],
            bytes,
        )
            .into_response(),
        Err(source) => ReviewError::Io { path, source }.into_response(),
    }
}

async fn rankings(State(svc): State<SharedService>, Json(sub): Json<Submission>) -> Response {
    match tokio::task::spawn_blocking(move || svc.submit(&sub)).await {
        Ok(Ok(progress)) => (StatusCode::CREATED, Json(progress)).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => internal(e),
    }
}

async fn report(
    State((svc, token)): State<(SharedService, String)>,
    headers: HeaderMap,
    Query(q): Query<ReportQuery>,
) -> Response {
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if token.is_empty() || presented != Some(token.as_str()) {
        return (
            StatusCode::UNAUTHORIZED,
            Json(ErrorBody {
                error: "unauthorized".into(),
                message: "admin token required".into(),
            }),
        )
            .into_response();
    }
    match svc.report() {
        Ok(r) if q.format.as_deref() == Some("text") => r.to_table().into_response(),
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

fn internal(e: impl std::fmt::Display) -> Response {
    tracing::error!("{e}");
    (StatusCode::INTERNAL_SERVER_ERROR, "internal error").into_response()
}

pub fn router(svc: SharedService, admin_token: String, static_dir: Option<PathBuf>) -> Router {
    let admin = Router::new()
        .route("/report", get(report))
        .with_state((svc.clone(), admin_token));
    let api = Router::new()
        .route("/sessions", post(open_session))
        .route("/sets/next", get(next_set))
        .route("/image/{id}", get(image))
        .route("/rankings", post(rankings))
        .with_state(svc)
        .merge(admin);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true)),
        None => api,
    }
}

/// Serves until ctrl-c, then snapshots the store.
pub async fn serve(
    svc: SharedService,
    admin_token: String,
    static_dir: Option<PathBuf>,
    addr: SocketAddr,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    axum::serve(listener, router(svc.clone(), admin_token, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if let Err(e) = svc.store().snapshot() {
        tracing::warn!("final snapshot failed: {e}");
    }
    Ok(())
}
