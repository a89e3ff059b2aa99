use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{file}: clip {clip}: field `{field}`: {reason}")]
    Parse {
        file: String,
        clip: String,
        field: String,
        reason: String,
    },

    #[error("no annotations.json in {0}")]
    NoAnnotations(PathBuf),

    #[error("clip `{0}` listed in annotations.json has no directory")]
    MissingClipDir(String),

    #[error("unknown clip ids: {}", .0.join(", "))]
    MissingClips(Vec<String>),

    #[error("no clips")]
    NoClips,

    #[error("unknown category id {0}")]
    UnknownCategory(u32),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint version {found} does not match supported version {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("non-finite loss at iteration {iteration}: {breakdown}")]
    NonFiniteLoss { iteration: usize, breakdown: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. } | Error::Parse { .. } | Error::UnknownCategory(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
