//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric input was non-finite or otherwise outside its domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The regularized weight system could not be factorized.
    #[error("singular system while solving reconstruction weights")]
    SingularSystem,

    /// An optimizer step produced a non-finite parameter.
    #[error("non-finite parameter update at step {step}")]
    NonFiniteUpdate { step: usize },

    /// A subject id was not present in the dataset.
    #[error("unknown subject {0}")]
    UnknownSubject(u32),

    /// An evaluation set was too small to fit.
    #[error("too few samples: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },

    /// Bad run configuration (unknown keys, out-of-range values, parse failures).
    #[error("config error: {0}")]
    Config(String),

    /// Malformed dataset, checkpoint, or log file.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    /// A referenced input file does not exist.
    #[error("missing file: {0}")]
    MissingFile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-parsable class name, used by the CLI for one-line errors.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::SingularSystem => "SingularSystem",
            Error::NonFiniteUpdate { .. } => "NonFiniteUpdate",
            Error::UnknownSubject(_) => "UnknownSubject",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::Config(_) => "BadConfig",
            Error::Parse { .. } => "ParseError",
            Error::MissingFile(_) => "MissingFile",
            Error::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
