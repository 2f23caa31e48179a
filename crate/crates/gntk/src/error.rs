use thiserror::Error;

/// Errors produced by dataset parsing and featurization.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

/// Errors produced by kernel computation and gram caching.
#[derive(Debug, Error)]
pub enum KernelError {
    #[error("feature dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("dataset is not featurized (feature dimension is 0)")]
    NotFeaturized,
    #[error("norm scaling undefined: node {node} has an all-zero aggregated feature")]
    ZeroAggregatedFeature { node: usize },
    #[error("gram diagonal entry {index} is not strictly positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("gram cache: {0}")]
    Cache(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Errors produced by predictors and bound computations.
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("matrix is not positive definite; try a larger ridge")]
    NotPositiveDefinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{0}")]
    Invalid(String),
}

/// Errors produced by the finite-width oracle.
#[derive(Debug, Error)]
pub enum OracleError {
    #[error("covariance matrix is not PSD (min eigenvalue {0})")]
    NotPsd(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{0}")]
    Invalid(String),
}
