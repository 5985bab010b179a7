use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: every axis must be at least 1")]
    ZeroSize([usize; 3]),

    #[error("volume payload has {got} entries, expected {expected}")]
    PayloadLength { expected: usize, got: usize },

    #[error("label id {label} is outside 0..{num_classes}")]
    LabelOutOfRange { label: u16, num_classes: u16 },

    #[error("format error: {0}")]
    Format(String),

    #[error("patch size {size:?} is not divisible by {divisor:?} (axis {axis})")]
    Indivisible {
        size: [usize; 3],
        divisor: [usize; 3],
        axis: usize,
    },

    #[error("target {target:?} is smaller than the minimal patch {min:?}")]
    TargetTooSmall { target: [usize; 3], min: [usize; 3] },

    #[error("{total} epochs cannot cover {stages} stages")]
    TooFewEpochs { total: usize, stages: usize },

    #[error("invalid policy: {0}")]
    Policy(String),

    #[error("volume has no foreground voxels")]
    NoForeground,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("strategy {strategy} needs at least {needed} volumes, dataset has {got}")]
    DatasetTooSmall {
        strategy: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("statistics: {0}")]
    Stats(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
