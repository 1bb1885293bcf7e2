use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fhrformer_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        CliError::Format { path: path.to_path_buf(), msg: msg.into() }
    }

    pub fn csv(path: &Path, source: csv::Error) -> Self {
        CliError::Csv { path: path.to_path_buf(), source }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        use fhrformer_core::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Dimension(_) => "dimension",
                E::Parameter(_) => "parameter",
                E::Data(_) => "data",
                E::Config(_) => "config",
                E::Training(_) => "training",
                E::NonFinite(_) => "non_finite",
                E::UndefinedCorrelation(_) => "undefined_correlation",
                E::Checkpoint(_) => "checkpoint",
            },
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::Config(_) => "config",
            CliError::Csv { .. } => "csv",
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
