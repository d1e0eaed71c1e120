use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate projection: |Ax| = {norm:e} is below the 1e-12 floor")]
    DegenerateProjection { norm: f64 },

    #[error("training diverged at step {step}: {what} is not finite")]
    Diverged { step: usize, what: String },

    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch in {path}: expected d={expected}, file has d={found}")]
    DimMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("checkpoint version mismatch: file has v{found}, this build reads v{expected}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("config hash mismatch: checkpoint {found:016x}, expected {expected:016x}")]
    ConfigHashMismatch { expected: u64, found: u64 },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("{path}:{line}: {reason}")]
    MalformedLine {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("duplicate utterance id {0:?}")]
    DuplicateId(String),

    #[error("word {word:?} in utterance {utterance:?} ends before it starts ({start} > {end})")]
    InvalidTiming {
        utterance: String,
        word: String,
        start: f64,
        end: f64,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse grouping of errors for exit codes and foreign status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCategory {
    Config,
    Io,
    /// Malformed, truncated or mismatched files and records.
    Format,
    /// Divergence, non-finite values, degenerate projections.
    Numeric,
    UndefinedMetric,
    Precondition,
    InvalidInput,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Io { .. } => ErrorCategory::Io,
            Error::MalformedHeader { .. }
            | Error::TruncatedPayload { .. }
            | Error::DimMismatch { .. }
            | Error::VersionMismatch { .. }
            | Error::ConfigHashMismatch { .. }
            | Error::Corrupt { .. }
            | Error::MalformedLine { .. }
            | Error::DuplicateId(_)
            | Error::InvalidTiming { .. }
            | Error::Json(_) => ErrorCategory::Format,
            Error::Diverged { .. } | Error::NonFinite(_) | Error::DegenerateProjection { .. } => {
                ErrorCategory::Numeric
            }
            Error::UndefinedMetric(_) => ErrorCategory::UndefinedMetric,
            Error::Precondition(_) => ErrorCategory::Precondition,
            Error::InvalidInput(_) | Error::ShapeMismatch(_) => ErrorCategory::InvalidInput,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Shorthand for building an `InvalidInput` error with `format!` syntax.
macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::Error::InvalidInput(format!($($arg)*)) };
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::ShapeMismatch(format!($($arg)*)) };
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}

pub(crate) use config_err;
pub(crate) use invalid;
pub(crate) use shape_err;
