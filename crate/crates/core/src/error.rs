use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed corpus, vocabulary, embedding or checkpoint content.
    #[error("format error: {0}")]
    Format(String),

    /// A caller broke an operation's precondition (shape, length, grammar).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Metric asked for on an empty input.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite gradient in `{param}` at step {step}")]
    NonFiniteGradient { param: String, step: u64 },

    #[error("oracle: {0}")]
    Oracle(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
