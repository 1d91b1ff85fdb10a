use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis `{axis}` (expected {expected}, got {got})")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: rank mismatch (expected {expected}, got shape {shape:?})")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("graph already consumed by a previous backward pass")]
    StaleGraph,

    #[error("degenerate landmark cloud: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{mode} mode requires a prior vector")]
    MissingPrior { mode: &'static str },

    #[error("feedback update requested but the model has no RFM (baseline mode)")]
    NoFeedback,

    #[error("non-finite loss at step {step} (lr {lr:e}, grad norm {grad_norm:e})")]
    NonFiniteLoss { step: usize, lr: f64, grad_norm: f64 },

    #[error("{}: parse error at {location}: {message}", path.display())]
    Parse {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Validation { path: PathBuf, message: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("dataset carries no generator ground truth")]
    NoGroundTruth,

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Parse {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
