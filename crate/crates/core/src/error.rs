use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector is not tangent at the base point (residual {residual:.3e})")]
    NotTangent { residual: f64 },
    #[error("point lies in the cut locus of the base point")]
    CutLocus,
    #[error("{0} is not compact")]
    NonCompact(String),
    #[error("frame scheme {scheme} is not available on {manifold}")]
    UnsupportedScheme { scheme: String, manifold: String },
    #[error("operation not supported on {0}")]
    UnsupportedManifold(String),
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("ODE solver exceeded {0} steps")]
    MaxStepsExceeded(usize),
    #[error("ODE step size collapsed at t = {t}")]
    StiffnessDetected { t: f64 },
    #[error("malformed row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("checkpoint was written for a different network (expected spec hash {expected}, found {found})")]
    SpecHashMismatch { expected: String, found: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
