use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("unknown category `{0}`")]
    UnknownCategory(String),

    #[error("unknown content type `{0}`")]
    UnknownContentType(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f32 },

    #[error("invalid ranking `{text}`: {reason}")]
    Ranking { text: String, reason: String },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("scene rejected: {0}")]
    Scene(String),

    #[error("incompatible violation {violation} for scenario {scenario}")]
    IncompatibleViolation { scenario: String, violation: String },

    #[error(
        "prompt ids do not match: missing in scores {missing_in_scores:?}, missing in rankings {missing_in_rankings:?}"
    )]
    IdMismatch {
        missing_in_scores: Vec<String>,
        missing_in_rankings: Vec<String>,
    },

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
