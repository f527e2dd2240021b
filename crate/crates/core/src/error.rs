use thiserror::Error;

/// Errors produced by simulation, assembly and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid kernel spec: {0}")]
    InvalidKernel(String),
    #[error("inadmissible exterior profile: {0}")]
    InadmissibleProfile(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time step underflow at t = {t}: {reason}")]
    StepUnderflow { t: f64, reason: String },
    #[error("nonlinear solve failed: {0}")]
    SolveFailure(String),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("window error: {0}")]
    Window(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("cache format error: {0}")]
    CacheFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
