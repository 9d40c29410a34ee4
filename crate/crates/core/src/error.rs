use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. Each variant names the offending input so
/// that the CLI can report which stage failed and why.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("malformed volume header {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },

    #[error("payload size mismatch in {path}: header declares {expected} values, found {found} bytes")]
    PayloadSize {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("prediction file error: {0}")]
    Predictions(String),

    #[error("patient mismatch: {0}")]
    PatientMismatch(String),

    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),

    #[error("image format error: {0}")]
    ImageFormat(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("stage {stage} failed for {subject}: {source}")]
    Stage {
        stage: &'static str,
        subject: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the pipeline stage and subject it came from.
    pub fn in_stage(self, stage: &'static str, subject: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            subject: subject.into(),
            source: Box::new(self),
        }
    }
}
