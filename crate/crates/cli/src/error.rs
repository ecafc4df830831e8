use std::path::PathBuf;

use cst_core::AuditError;
use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Audit(#[from] AuditError),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Audit(e) => e.kind(),
            CliError::Manifest(_) => "manifest",
            CliError::File { .. } => "file",
            CliError::Json(_) => "json",
        }
    }

    pub fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::File { path, source }
    }
}

/// The record written on failure, one JSON object.
#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub status: &'static str,
    pub command: &'a str,
    pub kind: &'static str,
    pub message: String,
}

impl<'a> ErrorRecord<'a> {
    pub fn new(command: &'a str, err: &CliError) -> Self {
        ErrorRecord {
            status: "error",
            command,
            kind: err.kind(),
            message: err.to_string(),
        }
    }
}
