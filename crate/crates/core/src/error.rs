use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error(
        "pair budget exceeded: {pairs} pairs requested but the budget is {budget}; \
         use the bagged pipeline (--method bagged) or raise the budget"
    )]
    PairBudget { pairs: u128, budget: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidValue(_)
                | Error::Domain(_)
                | Error::Shape { .. }
                | Error::Ingest(_)
                | Error::PairBudget { .. }
                | Error::Config(_)
                | Error::ModelFormat(_)
        ) || matches!(self, Error::Csv { source, .. } if !matches!(source.kind(), csv::ErrorKind::Io(_)))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
