use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite values at t = {time}; the time step is probably too large")]
    NonFinite { time: f64 },

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("series too short: {0}")]
    SeriesTooShort(String),

    #[error("relaxation did not converge: {0}")]
    NotConverged(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
