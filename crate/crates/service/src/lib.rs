//! HTTP API over the live expert-labeling queues of suspended runs.
//!
//! | method | path                        | answer                                   |
//! |--------|-----------------------------|------------------------------------------|
//! | GET    | `/api/queue?run_id=`        | pending tasks of the run                 |
//! | GET    | `/api/task/{id}`            | one task with its full conversation      |
//! | POST   | `/api/task/{id}/submit`     | the submitted task; 409 if already done  |
//! | GET    | `/api/status?run_id=`       | `{iteration, pending_count, resumable}`  |
//!
//! `run_id` may be omitted when the service was started for a default run.
//! Every error body is `{"error": "..."}`. There is no authentication; bind
//! to a local address only.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sumloop::annotation::{AnnotationError, AnnotationTask, QueueStatus, TaskStore};
use sumloop::engine::is_valid_run_id;
use tower_http::services::ServeDir;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    runs_root: PathBuf,
    default_run: Option<String>,
    // one store per run so submissions for a run go through one lock
    stores: Mutex<HashMap<String, Arc<TaskStore>>>,
}

impl AppState {
    pub fn new(runs_root: impl Into<PathBuf>, default_run: Option<String>) -> Self {
        Self {
            inner: Arc::new(Inner {
                runs_root: runs_root.into(),
                default_run,
                stores: Mutex::new(HashMap::new()),
            }),
        }
    }

    fn store(&self, run_id: Option<String>) -> Result<Arc<TaskStore>, ApiError> {
        let run_id = run_id
            .or_else(|| self.inner.default_run.clone())
            .ok_or_else(|| ApiError::bad_request("run_id query parameter is required"))?;
        if !is_valid_run_id(&run_id) {
            return Err(ApiError::bad_request(format!("invalid run_id {run_id:?}")));
        }
        let dir = self.inner.runs_root.join(&run_id);
        if !dir.is_dir() {
            return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown run {run_id:?}")));
        }
        let mut stores = self.inner.stores.lock().unwrap();
        Ok(Arc::clone(
            stores
                .entry(run_id.clone())
                .or_insert_with(|| Arc::new(TaskStore::open(&dir, &run_id))),
        ))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    task: Option<Box<AnnotationTask>>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            task: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let status = match &e {
            AnnotationError::UnknownTask(_) => StatusCode::NOT_FOUND,
            AnnotationError::EmptySummary => StatusCode::BAD_REQUEST,
            AnnotationError::Conflict(_) | AnnotationError::PreviousUnfulfilled { .. } => StatusCode::CONFLICT,
            AnnotationError::Storage { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(task) = self.task {
            body["task"] = serde_json::to_value(task).expect("task serializes");
        }
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Deserialize)]
pub struct RunQuery {
    run_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueueView {
    pub run_id: String,
    pub iteration: u32,
    pub pending_count: usize,
    pub tasks: Vec<AnnotationTask>,
}

#[derive(Debug, Deserialize)]
pub struct SubmitBody {
    summary: String,
}

/// Run blocking store access off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn queue(State(state): State<AppState>, Query(q): Query<RunQuery>) -> Result<Json<QueueView>, ApiError> {
    let store = state.store(q.run_id)?;
    blocking(move || {
        let status = store.status()?;
        let tasks = store.pending()?;
        Ok(Json(QueueView {
            run_id: store.run_id().to_string(),
            iteration: status.iteration,
            pending_count: tasks.len(),
            tasks,
        }))
    })
    .await
}

async fn task(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RunQuery>,
) -> Result<Json<AnnotationTask>, ApiError> {
    let store = state.store(q.run_id)?;
    blocking(move || Ok(Json(store.get(&id)?))).await
}

async fn submit(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RunQuery>,
    body: Result<Json<SubmitBody>, JsonRejection>,
) -> Result<Json<AnnotationTask>, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let store = state.store(q.run_id)?;
    blocking(move || match store.submit(&id, &body.summary) {
        Ok(task) => {
            log::info!("run {}: task {id} submitted", store.run_id());
            Ok(Json(task))
        }
        Err(e @ AnnotationError::Conflict(_)) => {
            let mut err = ApiError::from(e);
            err.message = format!("task {id:?} is already labeled");
            err.task = store.get(&id).ok().map(Box::new);
            Err(err)
        }
        Err(e) => Err(e.into()),
    })
    .await
}

async fn status(State(state): State<AppState>, Query(q): Query<RunQuery>) -> Result<Json<QueueStatus>, ApiError> {
    let store = state.store(q.run_id)?;
    blocking(move || Ok(Json(store.status()?))).await
}

pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/task/{id}", get(task))
        .route("/api/task/{id}/submit", post(submit))
        .route("/api/status", get(status))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Bind `addr` and serve until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState, static_dir: Option<&Path>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}
