use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] avnav::Error),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Config(String),

    #[error("{0} already exists (pass --force to overwrite)")]
    PathConflict(PathBuf),

    #[error("{0}")]
    GradCheck(String),
}

impl From<avnav_tensor::TensorError> for CliError {
    fn from(e: avnav_tensor::TensorError) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::PathConflict(_) => "path_conflict",
            CliError::GradCheck(_) => "gradcheck",
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
