use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient data: samples up to index {needed} required, {available} available")]
    InsufficientData { needed: usize, available: usize },

    #[error("predictor form is not stable: spectral radius of A - KC is {0}")]
    UnstablePredictor(f64),

    #[error("data window of {nbar} samples is too short, at least {required} needed")]
    WindowTooShort { nbar: usize, required: usize },

    #[error("ill-conditioned correlation matrix for window starting at {window_start} (condition number {condition:e})")]
    IllConditioned { window_start: usize, condition: f64 },

    #[error("rank deficient: rank {rank}, expected at least {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("quadratic program is infeasible")]
    Infeasible,

    #[error("quadratic program not solved after {iterations} iterations (max violation {violation:e})")]
    MaxIterations { iterations: usize, violation: f64 },

    #[error("hessian is not positive definite")]
    NotPositiveDefinite,

    #[error("reference has zero energy over the evaluation interval")]
    ZeroReferenceEnergy,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("controller failed at step {step}: {source}")]
    Controller { step: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
