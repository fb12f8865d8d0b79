use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("not an exact derivative: leading term {0}")]
    NotExactDerivative(String),

    #[error("aliasing: grid of {grid} points cannot resolve products of bandwidth {bandwidth} (need at least {required})")]
    Aliasing {
        grid: usize,
        bandwidth: usize,
        required: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient resolution: {reason} (estimated n_max needed: {needed})")]
    Resolution { reason: String, needed: usize },

    #[error("flow integration failed at s = {s}: {reason}")]
    Integration { s: f64, reason: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
