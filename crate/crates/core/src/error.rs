use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the pipeline can report.
///
/// [`Error::category`] gives the stable short name the CLI prints.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {file} at line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("statement of {len} tokens does not fit max_len {max_len}")]
    StatementTooLong { len: usize, max_len: usize },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("no alternative value exists to corrupt {0}")]
    CorruptionImpossible(String),
    #[error("salience profile is empty")]
    EmptyProfile,
    #[error("index {index} out of range for statement of length {len}")]
    Index { index: usize, len: usize },
    #[error("missing salience profile for instance {0}")]
    MissingProfile(String),
    #[error("instance {0} is refuted; the auxiliary task only uses entailed statements")]
    RefutedInstance(String),
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "ParseError",
            Error::Integrity(_) => "IntegrityError",
            Error::Io { .. } => "IoError",
            Error::StatementTooLong { .. } => "StatementTooLong",
            Error::Dimension(_) => "DimensionError",
            Error::NonFinite(_) => "NonFiniteError",
            Error::Type(_) => "TypeError",
            Error::CorruptionImpossible(_) => "CorruptionImpossible",
            Error::EmptyProfile => "EmptyProfile",
            Error::Index { .. } => "IndexError",
            Error::MissingProfile(_) => "MissingProfile",
            Error::RefutedInstance(_) => "RefutedInstanceError",
            Error::MissingCheckpoint(_) => "MissingCheckpoint",
            Error::Checkpoint(_) => "CheckpointError",
            Error::Config(_) => "ConfigError",
        }
    }
}
