use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("modulation set is empty; the polarization graph would have no edges")]
    EmptyModulationSet,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("inconsistent measurements: {0}")]
    InconsistentMeasurements(String),

    #[error("connectivity unreachable: only {0} vertices left")]
    ConnectivityUnreachable(usize),

    #[error("angular synchronization failed: {0}")]
    Synchronization(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
