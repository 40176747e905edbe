use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingFailure { epoch: usize, detail: String },

    #[error("attribution failed at step {step}: {detail}")]
    AttributionFailure { step: usize, detail: String },

    #[error("score oracle failed at perturbation step {step}: {source}")]
    OracleFailure {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("only {passed} of the requested {requested} samples passed the selection filter")]
    InsufficientSamples { passed: usize, requested: usize },

    #[error("no data: {0}")]
    NoData(String),

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::MissingArtifact { .. } | Error::NoData(_) => 3,
            Error::TrainingFailure { .. }
            | Error::AttributionFailure { .. }
            | Error::OracleFailure { .. } => 4,
            Error::InsufficientSamples { .. } => 4,
            Error::Format { .. } | Error::Io(_) | Error::Json(_) => 3,
        }
    }
}
