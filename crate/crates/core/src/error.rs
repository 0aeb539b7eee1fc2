use thiserror::Error;

/// Errors raised by grid construction, solves, analyses and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("insufficient exterior volume: |Omega_R|_h = {available:.6} <= mu = {mu:.6}")]
    InsufficientExteriorVolume { available: f64, mu: f64 },

    #[error("invalid obstacles: {0}")]
    InvalidObstacles(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("region node ({i}, {j}) cannot reach any boundary node")]
    UnreachableBoundary { i: usize, j: usize },

    #[error("clearance violated at node ({i}, {j}): u = {value:e}")]
    ClearanceViolated { i: usize, j: usize, value: f64 },

    #[error("no free boundary: {0}")]
    NoFreeBoundary(&'static str),

    #[error("not converged: {0}")]
    NotConverged(String),

    #[error("malformed field data: {0}")]
    Format(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
