use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CimError {
    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("count mismatch in {what}: manifest declares {declared}, found {found}")]
    CountMismatch {
        what: String,
        declared: usize,
        found: usize,
    },

    /// A vector whose norm is below the normalization floor. `row` is set when
    /// the vector came from a corpus or a multi-row input.
    #[error("zero vector{}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    ZeroVector { row: Option<usize> },

    #[error("no eligible corpus rows")]
    EmptyCorpus,

    #[error("support set is empty")]
    EmptySupport,

    #[error("group of {0} candidates is too small (need at least 2)")]
    GroupTooSmall(usize),

    #[error("not enough samples: need {needed}, got {got}")]
    NotEnoughSamples { needed: usize, got: usize },

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CimError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CimError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, shared by the CLI and the HTTP service.
    pub fn code(&self) -> &'static str {
        match self {
            CimError::Format(_) => "FORMAT_ERROR",
            CimError::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            CimError::DuplicateId(_) => "DUPLICATE_ID",
            CimError::CountMismatch { .. } => "COUNT_MISMATCH",
            CimError::ZeroVector { .. } => "ZERO_VECTOR",
            CimError::EmptyCorpus => "EMPTY_CORPUS",
            CimError::EmptySupport => "EMPTY_SUPPORT",
            CimError::GroupTooSmall(_) => "GROUP_TOO_SMALL",
            CimError::NotEnoughSamples { .. } => "NOT_ENOUGH_SAMPLES",
            CimError::ZeroVariance(_) => "ZERO_VARIANCE",
            CimError::LengthMismatch(..) => "LENGTH_MISMATCH",
            CimError::InvalidParams(_) => "BAD_PARAMS",
            CimError::Io { .. } => "IO_ERROR",
            CimError::Json(_) => "FORMAT_ERROR",
        }
    }
}
