use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EsvmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EsvmError {
    #[error("empty series")]
    EmptySeries,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("truncation exceeds sample size (b_n = {bn}, n = {n})")]
    TruncationExceedsSampleSize { bn: usize, n: usize },

    #[error("degenerate series")]
    DegenerateSeries,

    #[error("family not linear in all parameters")]
    NonLinearFamily,

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<EsvmError>,
    },
}

impl EsvmError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EsvmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        EsvmError::InvalidInput(msg.into())
    }

    /// Wraps `self` with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        EsvmError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad configuration or input rather than
    /// by numerical trouble during a run.
    pub fn is_config_error(&self) -> bool {
        match self {
            EsvmError::Config(_)
            | EsvmError::InvalidInput(_)
            | EsvmError::DimensionMismatch { .. }
            | EsvmError::TruncationExceedsSampleSize { .. } => true,
            EsvmError::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }

    pub fn is_io_error(&self) -> bool {
        match self {
            EsvmError::Io { .. } => true,
            EsvmError::Stage { source, .. } => source.is_io_error(),
            _ => false,
        }
    }
}
