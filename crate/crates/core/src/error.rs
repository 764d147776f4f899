use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum FcrError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient experimental design: the interaction-rank check needs {required} non-control (t, x) pairs plus a control pair, found {found}")]
    DesignInsufficient { required: usize, found: usize },

    #[error("split protocol error: {0}")]
    Protocol(String),

    #[error("non-finite value in loss part `{part}`")]
    NonFinite { part: String },

    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
    },

    #[error("kernel matrix ill-conditioned even at regularization {lambda:e}")]
    IllConditioned { lambda: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("ingestion error at {location}: {message}")]
    Ingest { location: String, message: String },

    #[error("checkpoint incompatible: {0}")]
    Incompatible(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FcrError {
    pub fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        FcrError::Dimension {
            context: context.into(),
            expected,
            got,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FcrError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            FcrError::Config(_)
                | FcrError::Ingest { .. }
                | FcrError::Incompatible(_)
                | FcrError::Format { .. }
                | FcrError::Io { .. }
                | FcrError::Protocol(_)
                | FcrError::DesignInsufficient { .. }
                | FcrError::Precondition(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            FcrError::Dimension { .. } => "dimension",
            FcrError::Domain(_) => "domain",
            FcrError::Index { .. } => "index",
            FcrError::Config(_) => "config",
            FcrError::DesignInsufficient { .. } => "design_insufficient",
            FcrError::Protocol(_) => "protocol",
            FcrError::NonFinite { .. } => "non_finite",
            FcrError::Diverged { .. } => "diverged",
            FcrError::IllConditioned { .. } => "ill_conditioned",
            FcrError::Precondition(_) => "precondition",
            FcrError::Ingest { .. } => "ingest",
            FcrError::Incompatible(_) => "incompatible",
            FcrError::Format { .. } => "format",
            FcrError::Io { .. } => "io",
            FcrError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, FcrError>;
