use thiserror::Error;

/// Errors shared across the crate.
#[derive(Error, Debug)]
pub enum Error {
    #[error("unknown spectrum kind `{0}`")]
    UnknownSpectrumKind(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("spectrum not normalized: total mass {0} differs from 1 beyond 1e-12")]
    NotNormalized(f64),

    #[error("function evaluated to a non-finite value at support point lambda={0}")]
    NonFiniteAtSupport(f64),

    #[error("saddle-point extremizer failed to converge ({context}, residual {residual:.3e})")]
    SaddleNotConverged { context: String, residual: f64 },

    #[error("saddle-point domain violation: {0}")]
    DomainViolation(String),

    #[error("singular saddle Jacobian at (x={x}, y={y})")]
    SingularJacobian { x: f64, y: f64 },

    #[error("divergent single-site partition ({0})")]
    DivergentPartition(String),

    #[error("unsupported model combination: {0}")]
    UnsupportedModel(String),

    #[error("solver did not converge within {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("invariant violated at reported solution: {0}")]
    InvariantViolation(String),

    #[error("mismatched solutions: {0}")]
    MismatchedSolutions(String),

    #[error("no sign change of {quantity} in the scanned range [{lo}, {hi}]")]
    NoSignChange { quantity: String, lo: f64, hi: f64 },

    #[error("enumeration requires N <= {max}, got N = {n}")]
    EnumerationTooLarge { n: usize, max: usize },

    #[error("invalid problem instance: {0}")]
    InvalidInstance(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
