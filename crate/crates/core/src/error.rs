use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("percentile of an empty input")]
    EmptyInput,
    #[error("inverse transform left an imaginary residue of {0:e}")]
    SpectralResidue(f64),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("backward pass needs intermediates that were not recorded: {0}")]
    GraphNotRecorded(&'static str),
    #[error("non-finite gradient in parameter tensor `{0}`")]
    NonFiniteGradient(String),
    #[error("every pixel is IGNORE")]
    AllIgnored,
    #[error("batch contains no labeled pixel")]
    EmptyBatch,
    #[error("class {0} has no source negatives")]
    NoSourceNegatives(usize),
    #[error("no class has both queries and a prototype")]
    NoActiveClasses,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("class {0} has no features")]
    ClassMissing(usize),
    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(u64),
}

impl Error {
    /// Process exit status: 2 configuration, 3 io, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInvalid(_) | Error::ShapeMismatch(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            _ => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
