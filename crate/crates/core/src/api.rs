//! JSON bodies of the annotation API, shared by the server and its clients.
//!
//! Every response carries `schema`; clients should refuse versions they do not know.

use serde::{Deserialize, Serialize};

use crate::al_loop::{AlState, IterationRecord};

pub const SCHEMA: &str = "nelp.annotation.v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Submitted,
}

/// One sentence awaiting (or having received) a human segmentation.
/// `task_id` equals the sentence id, so it is stable across restarts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub task_id: u64,
    pub text: String,
    /// Character count; valid boundaries lie in `1..len`.
    pub len: usize,
    pub iteration: usize,
    pub status: TaskStatus,
    /// BMES string once submitted.
    pub tags: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchResponse {
    pub schema: String,
    pub tasks: Vec<AnnotationTask>,
    /// Seconds the returned tasks stay reserved for this caller.
    pub lease_secs: u64,
}

/// Word-boundary cut positions: `p` means a word ends before character `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub task_id: u64,
    pub boundaries: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelResponse {
    pub schema: String,
    pub task_id: u64,
    pub status: TaskStatus,
    pub tags: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusResponse {
    pub schema: String,
    pub strategy: String,
    /// Last completed round (0 = initial model); `None` before the first model exists.
    pub iteration: Option<usize>,
    pub iterations: usize,
    pub pending: usize,
    pub submitted: usize,
    pub test_f1: Option<f64>,
    pub best_iteration: Option<usize>,
    pub finished: bool,
    /// Set when the run stopped on an error.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub train_size: usize,
    pub test_nll: f64,
    pub test_f1: f64,
    pub seconds: f64,
    pub shortfall: usize,
}

impl From<&IterationRecord> for CurvePoint {
    fn from(r: &IterationRecord) -> Self {
        CurvePoint {
            iteration: r.iteration,
            train_size: r.train_size,
            test_nll: r.test_nll,
            test_f1: r.test_f1,
            seconds: r.seconds,
            shortfall: r.shortfall,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvesResponse {
    pub schema: String,
    pub strategy: String,
    pub history: Vec<CurvePoint>,
}

impl CurvesResponse {
    pub fn from_state(strategy: &str, state: Option<&AlState>) -> Self {
        CurvesResponse {
            schema: SCHEMA.into(),
            strategy: strategy.into(),
            history: state.map(|s| s.history.iter().map(CurvePoint::from).collect()).unwrap_or_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub schema: String,
    pub error: String,
}
