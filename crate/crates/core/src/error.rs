use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported audio format: {0}")]
    Format(String),

    #[error("corrupt audio file: {0}")]
    CorruptFile(String),

    #[error("audio contains no samples")]
    EmptyAudio,

    #[error("input too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label mapping error: {0}")]
    Mapping(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("tape already consumed by a previous backward pass")]
    StaleTape,

    #[error("non-finite value in `{name}`")]
    NonFinite { name: String },

    #[error("index {index} out of range for {len} categories")]
    Index { index: usize, len: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("nothing to evaluate: {0}")]
    EmptyEvaluation(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-parsable category used by the CLI error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::CorruptFile(_) => "corrupt-file",
            Error::EmptyAudio => "empty-audio",
            Error::TooShort { .. } => "too-short",
            Error::Config(_) => "config",
            Error::Shape(_) => "shape",
            Error::Mapping(_) => "mapping",
            Error::EmptySequence => "empty-sequence",
            Error::StaleTape => "stale-tape",
            Error::NonFinite { .. } => "non-finite",
            Error::Index { .. } => "index",
            Error::Checkpoint(_) => "checkpoint",
            Error::EmptyEvaluation(_) => "empty-evaluation",
            Error::Manifest(_) => "manifest",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
