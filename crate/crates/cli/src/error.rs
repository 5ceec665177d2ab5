use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] surfreg::Error),

    #[error("{0}")]
    Usage(String),

    #[error("config file {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{path}: {message}")]
    Path { path: PathBuf, message: String },

    #[error("{path} exists (pass --force to overwrite)")]
    Exists { path: PathBuf },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
            CliError::Config { .. } => "config",
            CliError::Path { .. } => "path",
            CliError::Exists { .. } => "exists",
        }
    }

    pub fn path(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        CliError::Path { path: path.into(), message: message.to_string() }
    }

    /// Writes the error JSON to stderr; usage errors exit with 2, the rest with 1.
    pub fn report(&self) -> ExitCode {
        let body = serde_json::json!({ "error": { "kind": self.kind(), "message": self.to_string() } });
        eprintln!("{body}");
        ExitCode::from(if matches!(self, CliError::Usage(_)) { 2 } else { 1 })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}
