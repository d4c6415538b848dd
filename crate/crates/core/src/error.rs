use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("{solver} diverged: {reason}")]
    Divergence {
        solver: &'static str,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(
        "behavior propensity is zero for trajectory {trajectory}, step {step}, action {action}"
    )]
    ZeroPropensity {
        trajectory: usize,
        step: usize,
        action: usize,
    },

    #[error("cannot step from terminal state {0}")]
    TerminalState(usize),

    #[error("sum of importance weights is zero")]
    ZeroWeightSum,

    #[error("labels contain a single class")]
    SingleClass,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
