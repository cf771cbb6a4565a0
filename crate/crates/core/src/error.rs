use thiserror::Error;

/// Errors raised anywhere in the inference engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("innovation covariance is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositiveSemidefinite(f64),
    #[error("transition matrix is not stable (spectral radius {0})")]
    Unstable(f64),
    #[error("non-finite value encountered")]
    NonFiniteValue,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("inner Newton solve failed: {0}")]
    InnerDivergence(String),
    #[error("optimizer exceeded {0} iterations")]
    MaxIterations(usize),
    #[error("line search failed to find an acceptable step")]
    LineSearchFailure,
    #[error("fit stopped with gradient max-norm {0:e}")]
    NotConverged(f64),
    #[error("observed information matrix is singular")]
    SingularInformation,
    #[error("parameter outside prior support: {0}")]
    OutOfSupport(String),
    #[error("no finite starting point after {0} attempts")]
    InitializationFailure(usize),
    #[error("too few draws: {0}")]
    TooFewDraws(String),
    #[error("parameter names differ between runs")]
    NameMismatch,
    #[error("no candidate model was fitted successfully")]
    NoSuccessfulFits,
    #[error("latent dimension {0} exceeds the quadrature limit of {1}")]
    DimensionTooLarge(usize, usize),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
