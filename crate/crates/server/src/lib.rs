//! HTTP/JSON service for interactive cropping and labeling sessions.

mod journal;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tsvmorph_core::cropper::{GridSpec, DEFAULT_THETA};
use tsvmorph_core::surface::{decode_png, encode_png};
use tsvmorph_core::train::{export_crops, Split, MANIFEST_FILE};

pub use journal::{Entry, Journal};
pub use session::{CropView, LabelRequest, Session, SessionView};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Internal(_) | ApiError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = Arc<Mutex<Session>>;

/// Sessions in memory plus their on-disk journal. Each session has its own
/// lock, so mutations of one session are serialized and journaled in order.
pub struct AppState {
    data_dir: PathBuf,
    journal: Journal,
    sessions: RwLock<HashMap<String, Shared>>,
    next_id: Mutex<u64>,
}

impl AppState {
    /// Opens `data_dir`, restoring every journaled session.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Arc<Self>, ApiError> {
        let data_dir = data_dir.into();
        let journal = Journal::open(data_dir.join("sessions"))?;
        let mut sessions = HashMap::new();
        let mut next = 1;
        for id in journal.ids()? {
            match journal.replay(&id) {
                Ok(s) => {
                    if let Some(n) = id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                        next = next.max(n + 1);
                    }
                    sessions.insert(id, Arc::new(Mutex::new(s)));
                }
                Err(e) => log::warn!("could not restore session {id}: {e}"),
            }
        }
        Ok(Arc::new(Self { data_dir, journal, sessions: RwLock::new(sessions), next_id: Mutex::new(next) }))
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    fn get(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("session {id}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/grid", put(put_grid))
        .route("/sessions/{id}/preview", get(preview))
        .route("/sessions/{id}/crops/{n}/label", post(post_label))
        .route("/sessions/{id}/export", post(export))
        .with_state(state)
}

/// Serves on `addr` until the process is stopped.
pub async fn serve(addr: SocketAddr, data_dir: PathBuf) -> Result<(), ApiError> {
    let state = AppState::open(data_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

#[derive(Debug, Deserialize)]
struct CreateParams {
    rows: u32,
    cols: u32,
    theta: Option<f64>,
    name: Option<String>,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Query(p): Query<CreateParams>,
    body: Bytes,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let image = decode_png(&body).map_err(|e| ApiError::BadRequest(format!("body is not a grayscale PNG: {e}")))?;
    let theta = p.theta.unwrap_or(DEFAULT_THETA);
    let source = p.name.unwrap_or_else(|| "mosaic".to_string());
    if source.is_empty() || source.contains(['/', '\\']) {
        return Err(ApiError::BadRequest(format!("invalid source name {source:?}")));
    }
    let id = {
        let mut next = state.next_id.lock().unwrap();
        let id = format!("s{:06}", *next);
        *next += 1;
        id
    };
    let session = Session::create(id.clone(), source.clone(), image, p.rows, p.cols, theta)?;
    state.journal.start(&id, &session.image, &Entry::Create { source, rows: p.rows, cols: p.cols, theta })?;
    let body = json!({
        "id": id,
        "grid": session.grid,
        "confident": session.confident,
        "crop_count": session.crops.len(),
    });
    state.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionView>, ApiError> {
    let session = state.get(&id)?;
    let view = session.lock().unwrap().view();
    Ok(Json(view))
}

async fn put_grid(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<SessionView>, ApiError> {
    let grid: GridSpec = serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let session = state.get(&id)?;
    let mut s = session.lock().unwrap();
    s.set_grid(grid)?;
    state.journal.append(&id, &Entry::Grid { grid })?;
    Ok(Json(s.view()))
}

#[derive(Debug, Deserialize)]
struct PreviewParams {
    cell: String,
}

async fn preview(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(p): Query<PreviewParams>,
) -> Result<Response, ApiError> {
    let parse = || -> Option<(u32, u32)> {
        let (r, c) = p.cell.split_once(',')?;
        Some((r.trim().parse().ok()?, c.trim().parse().ok()?))
    };
    let (row, col) = parse().ok_or_else(|| ApiError::BadRequest(format!("cell must be \"row,col\", got {:?}", p.cell)))?;
    let session = state.get(&id)?;
    let png = {
        let s = session.lock().unwrap();
        let i = s.crop_index(row, col).ok_or_else(|| ApiError::NotFound(format!("cell {row},{col}")))?;
        encode_png(&s.crops[i].image).map_err(|e| ApiError::Internal(e.to_string()))?
    };
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn post_label(
    State(state): State<Arc<AppState>>,
    UrlPath((id, n)): UrlPath<(String, usize)>,
    body: Bytes,
) -> Result<Json<CropView>, ApiError> {
    let req: LabelRequest = serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let session = state.get(&id)?;
    let mut s = session.lock().unwrap();
    let view = s.set_label(n, &req)?;
    state.journal.append(&id, &Entry::Label { index: n, request: req })?;
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
struct ExportParams {
    #[serde(default)]
    partial: bool,
}

#[derive(Debug, Default, Deserialize)]
struct ExportBody {
    out_dir: Option<PathBuf>,
    #[serde(default)]
    split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportResult {
    pub out_dir: PathBuf,
    pub manifest: PathBuf,
    pub written: usize,
    pub unlabeled: usize,
}

async fn export(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(p): Query<ExportParams>,
    body: Bytes,
) -> Result<Json<ExportResult>, ApiError> {
    let req: ExportBody = if body.is_empty() {
        ExportBody::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?
    };
    let session = state.get(&id)?;
    let mut s = session.lock().unwrap();
    let unlabeled = s.crops.len() - s.labeled();
    if unlabeled > 0 && !p.partial {
        return Err(ApiError::Conflict(format!("{unlabeled} crops are unlabeled; pass ?partial=true to export anyway")));
    }
    let out_dir = req.out_dir.unwrap_or_else(|| state.data_dir.join("exports").join(&id));
    export_crops(&out_dir, &s.source, &s.crops, req.split.unwrap_or(Split::Train))
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    state.journal.append(&id, &Entry::Export)?;
    s.dirty = false;
    Ok(Json(ExportResult { manifest: out_dir.join(MANIFEST_FILE), out_dir, written: s.crops.len(), unlabeled }))
}
