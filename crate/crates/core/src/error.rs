use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint dimensions disagree with header: {0}")]
    CheckpointDimension(String),

    #[error("corrupted checkpoint: {0}")]
    CheckpointCorrupt(String),

    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    IdxMagic { path: PathBuf, found: u32, expected: u32 },

    #[error("{path}: truncated IDX payload, expected {expected} bytes, found {found}")]
    IdxTruncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("IDX count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
