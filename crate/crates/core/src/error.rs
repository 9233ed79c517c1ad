use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    #[error("dimension mismatch{}: expected {expected}, found {found}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    DimensionMismatch {
        line: Option<usize>,
        expected: usize,
        found: usize,
    },

    #[error("sample `{0}` has a non-positive sigma")]
    NonPositiveSigma(String),

    #[error("sample `{0}` has a zero latent vector")]
    ZeroVector(String),

    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),

    #[error("reference pool is empty")]
    EmptyPool,

    #[error("labeled pool has {0} samples, at least 2 are required for a threshold")]
    PoolTooSmall(usize),

    #[error("no training data")]
    EmptyData,

    #[error("loss became non-finite at iteration {0}")]
    NonFiniteLoss(usize),

    #[error("mixture component collapsed on every restart")]
    DegenerateComponent,

    #[error("need at least 2 fits, got {0}")]
    TooFewFits(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteLoss(_) | Error::DegenerateComponent)
    }
}
