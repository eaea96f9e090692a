use thiserror::Error;

/// Errors raised across the allocation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),

    #[error("degenerate geometry: {0}")]
    Geometry(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("constraint {constraint} violated: {detail}")]
    ConstraintViolation {
        constraint: &'static str,
        detail: String,
    },

    #[error("instance too large for exhaustive search: {0}")]
    Refused(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed scenario file: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn violation(constraint: &'static str, detail: impl Into<String>) -> Self {
        Error::ConstraintViolation {
            constraint,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
