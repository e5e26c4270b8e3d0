use thiserror::Error;

/// Errors raised by the model-free bootstrap pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MfbError {
    #[error("empty series: {0}")]
    EmptySeries(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("lag {lag} out of range for series of length {len}")]
    LagOutOfRange { lag: usize, len: usize },

    #[error("value {value} outside the domain {domain}")]
    Domain { value: f64, domain: &'static str },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("conditional CDF query outside the data cloud")]
    Extrapolation,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("nonpositive pivot {value:e} at row {row}")]
    NonPositivePivot { row: usize, value: f64 },

    #[error("covariance repair failed: ridge would exceed {limit:e} (min eigenvalue below {min_eig_bound:e})")]
    RepairFailed { limit: f64, min_eig_bound: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("too many failed bootstrap replicates: {skipped} of {total}")]
    TooManySkips { skipped: usize, total: usize },

    #[error("too many failed paths: {failed} of {total}")]
    TooManyFailedPaths { failed: usize, total: usize },

    #[error("unstable VAR coefficient matrix (spectral radius {0:.4})")]
    UnstableVar(f64),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl MfbError {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            MfbError::EmptySeries(_) => "empty-series",
            MfbError::InvalidSeries(_) => "invalid-series",
            MfbError::LagOutOfRange { .. } => "lag-out-of-range",
            MfbError::Domain { .. } => "domain",
            MfbError::DegenerateSample(_) => "degenerate-sample",
            MfbError::Extrapolation => "extrapolation",
            MfbError::DimensionMismatch { .. } => "dimension-mismatch",
            MfbError::NonPositivePivot { .. } => "nonpositive-pivot",
            MfbError::RepairFailed { .. } => "repair-failed",
            MfbError::Config(_) => "config",
            MfbError::InsufficientData(_) => "insufficient-data",
            MfbError::TooManySkips { .. } => "too-many-skips",
            MfbError::TooManyFailedPaths { .. } => "too-many-failed-paths",
            MfbError::UnstableVar(_) => "unstable-var",
            MfbError::Internal(_) => "internal",
            MfbError::Io(_) => "io",
            MfbError::Parse(_) => "parse",
        }
    }

    /// Whether this error stems from the caller's input rather than the pipeline.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            MfbError::EmptySeries(_)
                | MfbError::InvalidSeries(_)
                | MfbError::Io(_)
                | MfbError::Parse(_)
                | MfbError::Config(_)
                | MfbError::InsufficientData(_)
                | MfbError::Domain { .. }
        )
    }
}

impl From<std::io::Error> for MfbError {
    fn from(e: std::io::Error) -> Self {
        MfbError::Io(e.to_string())
    }
}

impl From<csv::Error> for MfbError {
    fn from(e: csv::Error) -> Self {
        MfbError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MfbError>;
