use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum FbcapError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{name} is not positive semidefinite (min eigenvalue {min_eig:e})")]
    NotPsd { name: String, min_eig: f64 },

    #[error("{0} is not symmetric")]
    NotSymmetric(String),

    #[error("measurement-noise covariance V is singular: the feedback capacity is infinite")]
    InfiniteCapacity,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("innovation covariance is singular (condition number {cond:e})")]
    SingularInnovation { cond: f64 },

    #[error("noise model is not stable (spectral radius {0})")]
    UnstableModel(f64),

    #[error("Riccati iteration did not converge after {iterations} iterations (last update {last_update:e})")]
    NoConvergence { iterations: usize, last_update: f64 },

    #[error("operation requires a scalar channel (p = m = 1)")]
    NotScalar,

    #[error("{0}")]
    OutOfRange(String),

    #[error("capacity problem has no feasible point")]
    Infeasible,

    #[error("solver stalled: {0}")]
    SolverStall(String),

    #[error("i.i.d. covariance M has eigenvalue {0:e} below the clipping tolerance")]
    NotPsdAfterClip(f64),

    #[error("output innovation covariance is singular")]
    SingularPsiY,

    #[error("coding scheme requires M = 0, got trace(M) = {0:e}")]
    NonZeroIidComponent(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FbcapError>;
