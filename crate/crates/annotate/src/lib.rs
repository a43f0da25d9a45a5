//! Annotation queue over HTTP.
//!
//! Paths (all JSON unless noted):
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/health` | liveness |
//! | GET | `/api/categories` | ids, names and guideline text |
//! | GET | `/api/annotators` | roster |
//! | GET | `/api/annotators/{id}/next` | next item, 204 when done |
//! | GET | `/api/annotators/{id}/progress` | completed / total |
//! | GET | `/api/annotators/{id}/queue` | full queue state |
//! | GET | `/api/annotators/{id}/sheet.csv` | annotation sheet (CSV) |
//! | POST | `/api/annotations` | `{annotator_id, doc_id, labels}` |
//! | GET | `/api/progress` | every annotator |
//! | GET | `/api/disagreements` | items where annotators differ |
//! | GET | `/api/audit` | overwritten submissions |
//! | GET | `/api/gold` | soft labels over current records |
//!
//! `labels` is an object with one boolean per canonical category id; all
//! sixteen must be present. Anything else under `/` is served from the UI
//! directory when one is configured.

pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use pehlens::goldstandard::AnnotationRecord;
use pehlens::taxonomy::{Category, LabelVector};

pub use store::{
    items_from, AnnotationStore, Assignment, AuditEntry, Disagreement, ItemView, LeakGuard, Progress, QueueState,
    StoreError, SubmitOutcome,
};

pub struct Service {
    store: RwLock<AnnotationStore>,
    guard: LeakGuard,
}

pub type SharedService = Arc<Service>;

impl Service {
    pub fn new(store: AnnotationStore, guard: LeakGuard) -> SharedService {
        Arc::new(Service {
            store: RwLock::new(store),
            guard,
        })
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.store.read().unwrap().records()
    }
}

struct ApiError(StoreError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            StoreError::UnknownAnnotator(_) | StoreError::NotAssigned { .. } => StatusCode::FORBIDDEN,
            StoreError::UnknownDoc(_) => StatusCode::NOT_FOUND,
            StoreError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::Leak | StoreError::Log { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError(e)
    }
}

type ApiResult = Result<Response, ApiError>;

/// Serializes `value` and refuses to send it if it contains a masked surface.
fn guarded<T: Serialize>(svc: &Service, value: &T) -> ApiResult {
    let body = serde_json::to_string(value).expect("response serializes");
    svc.guard.check(&body)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

#[derive(Serialize)]
struct CategoryInfo {
    id: &'static str,
    name: &'static str,
    guideline: &'static str,
}

async fn health() -> &'static str {
    "ok"
}

async fn categories() -> Json<Vec<CategoryInfo>> {
    Json(
        Category::ALL
            .iter()
            .map(|c| CategoryInfo {
                id: c.id(),
                name: c.display_name(),
                guideline: c.guideline(),
            })
            .collect(),
    )
}

async fn annotators(State(svc): State<SharedService>) -> Json<Vec<String>> {
    Json(svc.store.read().unwrap().roster().to_vec())
}

#[derive(Serialize)]
struct NextItem<'a> {
    #[serde(flatten)]
    item: &'a ItemView,
    completed: usize,
    total: usize,
}

async fn next(State(svc): State<SharedService>, Path(id): Path<String>) -> ApiResult {
    let store = svc.store.read().unwrap();
    let p = store.progress(&id)?;
    match store.next(&id)? {
        Some(item) => guarded(
            &svc,
            &NextItem {
                item,
                completed: p.completed,
                total: p.total,
            },
        ),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn progress(State(svc): State<SharedService>, Path(id): Path<String>) -> ApiResult {
    let p = svc.store.read().unwrap().progress(&id)?;
    Ok(Json(p).into_response())
}

async fn queue(State(svc): State<SharedService>, Path(id): Path<String>) -> ApiResult {
    let q = svc.store.read().unwrap().queue(&id)?;
    Ok(Json(q).into_response())
}

async fn sheet(State(svc): State<SharedService>, Path(id): Path<String>) -> ApiResult {
    let csv = svc.store.read().unwrap().sheet_csv(&id)?;
    svc.guard.check(&csv)?;
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"{id}.csv\"")),
        ],
        csv,
    )
        .into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Submission {
    pub annotator_id: String,
    pub doc_id: String,
    pub labels: LabelVector,
    #[serde(default)]
    pub annotated_at: Option<DateTime<Utc>>,
}

async fn submit(State(svc): State<SharedService>, body: Result<Json<Submission>, JsonRejection>) -> ApiResult {
    let Json(s) = body.map_err(|e| StoreError::Invalid(e.body_text()))?;
    let out = svc.store.write().unwrap().submit(AnnotationRecord {
        annotator_id: s.annotator_id,
        doc_id: s.doc_id,
        labels: s.labels,
        annotated_at: s.annotated_at,
    })?;
    Ok(Json(out).into_response())
}

async fn all_progress(State(svc): State<SharedService>) -> Json<Vec<Progress>> {
    Json(svc.store.read().unwrap().all_progress())
}

async fn disagreements(State(svc): State<SharedService>) -> Json<Vec<Disagreement>> {
    Json(svc.store.read().unwrap().disagreements())
}

async fn audit(State(svc): State<SharedService>) -> Json<Vec<AuditEntry>> {
    Json(svc.store.read().unwrap().audit().to_vec())
}

async fn gold(State(svc): State<SharedService>) -> ApiResult {
    let g = svc.store.read().unwrap().gold()?;
    Ok(Json(g).into_response())
}

pub fn router(svc: SharedService, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/categories", get(categories))
        .route("/api/annotators", get(annotators))
        .route("/api/annotators/{id}/next", get(next))
        .route("/api/annotators/{id}/progress", get(progress))
        .route("/api/annotators/{id}/queue", get(queue))
        .route("/api/annotators/{id}/sheet.csv", get(sheet))
        .route("/api/annotations", post(submit))
        .route("/api/progress", get(all_progress))
        .route("/api/disagreements", get(disagreements))
        .route("/api/audit", get(audit))
        .route("/api/gold", get(gold))
        .with_state(svc);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

pub const DEFAULT_ADDR: ([u8; 4], u16) = ([127, 0, 0, 1], 8377);

/// Blocks serving until the process is stopped.
pub async fn serve(addr: SocketAddr, svc: SharedService, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service on http://{}", listener.local_addr()?);
    axum::serve(listener, router(svc, ui_dir)).await
}
