use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("matrix is not a rotation (orthogonality error {0:e})")]
    InvalidRotation(f64),

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("alignment underdetermined: {0}")]
    AlignmentUnderdetermined(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("bandwidth {bandwidth} exceeds what a {width}x{height} grid resolves")]
    BandwidthExceedsGrid {
        bandwidth: usize,
        width: usize,
        height: usize,
    },

    #[error("spectrum violates conjugate symmetry by {0:e}")]
    NonRealSpectrum(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    InvalidLoss(Vec<usize>),

    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("training fault on batch {batch:?}: {reason}")]
    TrainingFault { batch: Vec<usize>, reason: String },

    #[error("refinement fault: {0}")]
    RefineFault(String),

    #[error("unknown category {0:?}")]
    InvalidCategory(String),

    #[error("no visible points from the requested viewpoint")]
    DegenerateView,

    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
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

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
