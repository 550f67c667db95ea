use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate tuple: {0}")]
    DegenerateTuple(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("memory estimate of {needed} bytes exceeds the cap of {cap} bytes")]
    MemoryCap { needed: u128, cap: u128 },

    #[error("isolated point: zero degree at indices {0:?}")]
    IsolatedPoints(Vec<usize>),

    #[error("zero rows at indices {0:?}")]
    ZeroRows(Vec<usize>),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("{other:?}")),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
