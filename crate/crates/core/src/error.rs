use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-range input (bad coordinates, probabilities, parameters).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An argument lies outside the domain where the quantity is defined,
    /// e.g. a time too close to the terminal singularity.
    #[error("domain error: {0}")]
    Domain(String),

    /// The interpolant marginal vanishes at `state`, so the score is undefined there.
    #[error("score undefined at state {state} (t = {t}): zero interpolant mass")]
    UndefinedScore { t: f64, state: usize },

    /// The exact engine only handles state spaces up to `limit` states.
    #[error("capacity exceeded: {states} states > limit {limit}")]
    Capacity { states: usize, limit: usize },

    /// Non-finite gradient entry during training.
    #[error("non-finite gradient at interval {k}, state {state}, op {op}")]
    NonFiniteGradient { k: usize, state: usize, op: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
