use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("incompatible metrics schema, offending columns: {}", columns.join(", "))]
    Schema { columns: Vec<String> },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] skd_core::Error),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CliError::Csv {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Process exit status: 1 usage/config, 2 numeric divergence, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        use skd_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Schema { .. } => 1,
            CliError::Io { .. } | CliError::Csv { .. } => 3,
            CliError::Core(e) => match e {
                E::Divergence { .. } | E::NonFinite(_) => 2,
                E::Io { .. }
                | E::CheckpointDimension(_)
                | E::CheckpointCorrupt(_)
                | E::IdxMagic { .. }
                | E::IdxTruncated { .. }
                | E::IdxCountMismatch { .. } => 3,
                E::Dimension { .. } | E::Parameter(_) | E::Contract(_) => 1,
            },
        }
    }
}
