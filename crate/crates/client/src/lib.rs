//! Async client for the annotation API.

use nelp_core::api::{
    BatchResponse, CurvesResponse, ErrorResponse, LabelRequest, LabelResponse, StatusResponse, SCHEMA,
};
use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;

pub use nelp_core::api;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The server answered with a non-success status.
    #[error("server returned {status}: {reason}")]
    Status { status: StatusCode, reason: String },

    #[error("server speaks schema {0:?}, expected {SCHEMA:?}")]
    Schema(String),

    #[error(transparent)]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    /// Leases up to `k` pending tasks.
    pub async fn batch(&self, k: usize) -> Result<BatchResponse> {
        let r = self.http.get(format!("{}/batch?k={k}", self.base)).send().await?;
        let b: BatchResponse = decode(r).await?;
        check_schema(&b.schema)?;
        Ok(b)
    }

    pub async fn submit(&self, task_id: u64, boundaries: Vec<usize>) -> Result<LabelResponse> {
        let r = self
            .http
            .post(format!("{}/labels", self.base))
            .json(&LabelRequest { task_id, boundaries })
            .send()
            .await?;
        let b: LabelResponse = decode(r).await?;
        check_schema(&b.schema)?;
        Ok(b)
    }

    pub async fn status(&self) -> Result<StatusResponse> {
        let r = self.http.get(format!("{}/status", self.base)).send().await?;
        let b: StatusResponse = decode(r).await?;
        check_schema(&b.schema)?;
        Ok(b)
    }

    pub async fn curves(&self) -> Result<CurvesResponse> {
        let r = self.http.get(format!("{}/curves", self.base)).send().await?;
        let b: CurvesResponse = decode(r).await?;
        check_schema(&b.schema)?;
        Ok(b)
    }
}

fn check_schema(s: &str) -> Result<()> {
    if s == SCHEMA {
        Ok(())
    } else {
        Err(ClientError::Schema(s.to_string()))
    }
}

async fn decode<T: DeserializeOwned>(r: Response) -> Result<T> {
    let status = r.status();
    if status.is_success() {
        return Ok(r.json().await?);
    }
    let text = r.text().await.unwrap_or_default();
    let reason = serde_json::from_str::<ErrorResponse>(&text)
        .map(|e| e.error)
        .unwrap_or(text);
    Err(ClientError::Status { status, reason })
}
