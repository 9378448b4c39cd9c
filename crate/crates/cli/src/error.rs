use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] starshape::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Yaml {
        path: PathBuf,
        #[source]
        source: serde_yaml::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: unrecognized input ({reason})")]
    Schema { path: PathBuf, reason: String },
    #[error("plotting failed: {0}")]
    Plot(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Self::Csv {
            path: path.into(),
            source,
        }
    }

    /// 3 for invalid input or configuration, 1 for failures at run time.
    pub fn exit_code(&self) -> i32 {
        let config = match self {
            Self::Core(e) => e.is_config(),
            Self::Config(_) | Self::Yaml { .. } | Self::Schema { .. } => true,
            Self::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Self::Csv { source, .. } => !source.is_io_error(),
            Self::Plot(_) => false,
        };
        if config {
            3
        } else {
            1
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
