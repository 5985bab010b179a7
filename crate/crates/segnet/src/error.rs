use std::path::PathBuf;

use pgps_core::Shape3;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input {dims:?} is not divisible by {divisor:?}")]
    Indivisible { dims: Shape3, divisor: Shape3 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid network config: {0}")]
    Config(String),

    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] pgps_core::Error),
}
