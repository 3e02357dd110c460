use thiserror::Error;

/// Errors raised by the design pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("ill-conditioned: {0}")]
    IllConditioned(String),
    #[error("target covariance sequence is not achievable: {0}")]
    InfeasibleTarget(String),
    #[error("solver inconsistency: {0}")]
    SolverInconsistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;
