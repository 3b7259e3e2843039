use std::path::PathBuf;

use ascn::AscnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Core(#[from] AscnError),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 bad arguments or configuration, 3 unreadable or unwritable files,
    /// 4 numerical divergence, 5 class mismatch, 6 degenerate cloud.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Json { .. } => 2,
            CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                AscnError::InvalidParam(_) | AscnError::Config(_) | AscnError::Json(_) => 2,
                AscnError::Io { .. }
                | AscnError::Parse { .. }
                | AscnError::Version { .. }
                | AscnError::CorruptModel(_) => 3,
                AscnError::Numerical(_) => 4,
                AscnError::ClassMismatch(_) => 5,
                AscnError::DegenerateCloud(_) => 6,
                AscnError::DimensionMismatch { .. } => 1,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
