use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("artifact mismatch: {0}")]
    Mismatch(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{path} not found; run `pdmpq {command}` first")]
    Missing { path: PathBuf, command: &'static str },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<CliError>,
    },
    #[error(transparent)]
    Core(pdmpq::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Mismatch(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

impl From<pdmpq::Error> for CliError {
    fn from(e: pdmpq::Error) -> Self {
        match e {
            pdmpq::Error::Config(m) => CliError::Config(m),
            e @ (pdmpq::Error::Numerical(_) | pdmpq::Error::NonFinite { .. } | pdmpq::Error::Domain(_)) => {
                CliError::Numerical(e.to_string())
            }
            e => CliError::Core(e),
        }
    }
}
