use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("kernel bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),

    #[error("need at least {needed} particles, got {got}")]
    InsufficientParticles { needed: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("finite-difference oracle hit a non-finite evaluation: {0}")]
    OracleFailure(String),

    #[error("covariance matrix is not symmetric positive definite")]
    CovarianceNotSpd,

    #[error("operation requires a Gaussian target")]
    UnsupportedTarget,

    #[error("non-finite gradient at sampler step {step}")]
    Divergence { step: usize },

    #[error("per-step Jacobian is numerically singular at step {step}")]
    NonInvertibleStep { step: usize },

    #[error("exact-Jacobian oracle limited to d <= {max_dim}, m <= {max_particles}")]
    OracleScale { max_dim: usize, max_particles: usize },

    #[error("stochastic dynamics have no deterministic transport map")]
    NonDeterministicDynamics,

    #[error("no pool particle lies within the requested range")]
    AllOutOfRange,

    #[error("episode already finished; reset the environment")]
    EpisodeFinished,

    #[error("replay buffer holds {got} transitions, need {needed}")]
    BufferUnderflow { needed: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite loss at gradient step {step}; diagnostic checkpoint at {checkpoint}")]
    NanAbort { step: u64, checkpoint: PathBuf },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("malformed checkpoint {path}: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
