use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("integration blew up: non-finite state after step (dt = {dt})")]
    IntegrationBlowup { dt: f64 },

    #[error("initial state outside the activity bound: {0}")]
    OutsideActivityBound(String),

    #[error("trajectory too short: length {len}, need at least {needed}")]
    TrajectoryTooShort { len: usize, needed: usize },

    #[error("cannot rebalance: class {missing} has no samples")]
    RebalanceImpossible { missing: u8 },

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("single-class input: every label is {0}")]
    SingleClass(u8),

    #[error("not enough samples: have {have}, need at least {need}")]
    NotEnoughSamples { have: usize, need: usize },

    #[error("quantile index {index} exceeds resample count {resamples}; need M >= {required}")]
    QuantileOutOfRange {
        index: usize,
        resamples: usize,
        required: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::InvalidSplit(_)
            | Error::QuantileOutOfRange { .. }
            | Error::TrajectoryTooShort { .. } => 2,
            Error::MissingInput(_) => 3,
            Error::Io { .. } => 4,
            Error::Malformed { .. }
            | Error::VersionMismatch { .. }
            | Error::Json(_)
            | Error::Csv(_) => 5,
            Error::Divergence { .. } | Error::IntegrationBlowup { .. } => 6,
            Error::RebalanceImpossible { .. }
            | Error::SingleClass(_)
            | Error::EmptyDataset
            | Error::NotEnoughSamples { .. } => 7,
            Error::DimensionMismatch { .. } | Error::OutsideActivityBound(_) => 8,
        }
    }
}
