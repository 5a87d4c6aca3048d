//! HTTP annotation API (`/batch`, `/labels`, `/status`, `/curves`) and the
//! session that runs active learning behind it.

pub mod queue;
mod session;

use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nelp_core::al_loop::AlState;
use nelp_core::api::{
    BatchResponse, CurvesResponse, ErrorResponse, LabelRequest, LabelResponse, StatusResponse, TaskStatus, SCHEMA,
};
use serde::Deserialize;

pub use queue::{AnnotationQueue, HumanOracle, SubmitError};
pub use session::{start_session, Session, SessionError};

/// Latest view of the run, written by the loop thread.
#[derive(Clone, Debug, Default)]
pub struct Progress {
    pub strategy: String,
    pub iterations: usize,
    pub state: Option<AlState>,
    pub finished: bool,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct AppState {
    pub queue: Arc<AnnotationQueue>,
    pub progress: Arc<Mutex<Progress>>,
}

impl AppState {
    pub fn new(queue: Arc<AnnotationQueue>, progress: Progress) -> Self {
        AppState {
            queue,
            progress: Arc::new(Mutex::new(progress)),
        }
    }

    fn snapshot(&self) -> Progress {
        self.progress.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/batch", get(batch))
        .route("/labels", post(labels))
        .route("/status", get(status))
        .route("/curves", get(curves))
        .with_state(state)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorResponse {
            schema: SCHEMA.into(),
            error: self.1,
        };
        (self.0, Json(body)).into_response()
    }
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        let code = match e {
            SubmitError::NotFound(_) => StatusCode::NOT_FOUND,
            SubmitError::AlreadySubmitted(_) => StatusCode::CONFLICT,
            SubmitError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError(code, e.to_string())
    }
}

#[derive(Deserialize)]
struct BatchQuery {
    k: Option<usize>,
}

const DEFAULT_BATCH: usize = 10;
const MAX_BATCH: usize = 1000;

async fn batch(State(s): State<AppState>, Query(q): Query<BatchQuery>) -> Json<BatchResponse> {
    let k = q.k.unwrap_or(DEFAULT_BATCH).min(MAX_BATCH);
    let tasks = s.queue.lease_batch(k, Instant::now());
    Json(BatchResponse {
        schema: SCHEMA.into(),
        tasks,
        lease_secs: s.queue.lease().as_secs(),
    })
}

async fn labels(State(s): State<AppState>, body: Result<Json<LabelRequest>, axum::extract::rejection::JsonRejection>) -> Result<Json<LabelResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.body_text()))?;
    let tags = s.queue.submit(req.task_id, &req.boundaries)?;
    tracing::debug!(task = req.task_id, "labels accepted");
    Ok(Json(LabelResponse {
        schema: SCHEMA.into(),
        task_id: req.task_id,
        status: TaskStatus::Submitted,
        tags: tags.to_string(),
    }))
}

async fn status(State(s): State<AppState>) -> Json<StatusResponse> {
    let p = s.snapshot();
    let (pending, submitted) = s.queue.counts();
    let st = p.state.as_ref();
    Json(StatusResponse {
        schema: SCHEMA.into(),
        strategy: p.strategy,
        iteration: st.map(|s| s.iteration),
        iterations: p.iterations,
        pending,
        submitted,
        test_f1: st.and_then(|s| s.history.last()).map(|r| r.test_f1),
        best_iteration: st.map(|s| s.best.iteration),
        finished: p.finished,
        error: p.error,
    })
}

async fn curves(State(s): State<AppState>) -> Json<CurvesResponse> {
    let p = s.snapshot();
    Json(CurvesResponse::from_state(&p.strategy, p.state.as_ref()))
}
