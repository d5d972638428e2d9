use std::fmt;
use std::io;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("missing {what}; run `lrflow {producer}` first")]
    MissingArtifact { what: String, producer: &'static str },
    #[error("output directory {0} is locked by another run")]
    Locked(String),
    #[error(transparent)]
    Compute(#[from] lrflow_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        Self::Format { path: path.display().to_string(), msg: msg.into() }
    }

    pub fn missing(path: &Path, producer: &'static str) -> Self {
        Self::MissingArtifact { what: path.display().to_string(), producer }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Io { .. } => "io",
            Self::Format { .. } => "format",
            Self::MissingArtifact { .. } => "missing_artifact",
            Self::Locked(_) => "locked",
            Self::Compute(_) => "compute",
        }
    }

    /// Single-line `error: kind=... msg="..."` report for stderr.
    pub fn report(&self) -> ErrorLine<'_> {
        ErrorLine(self)
    }
}

pub struct ErrorLine<'a>(&'a CliError);

impl fmt::Display for ErrorLine<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.0.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
        write!(f, "error: kind={} msg=\"{}\"", self.0.kind(), msg)?;
        if let CliError::MissingArtifact { producer, .. } = self.0 {
            write!(f, " producer={producer}")?;
        }
        Ok(())
    }
}
