use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("format error in {source_name} at record {record}: {message}")]
    Format {
        source_name: String,
        record: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("planning error: {0}")]
    Planning(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("verification failed at offset {offset}: {message}")]
    Verification { offset: u64, message: String },

    #[error("numeric error in {parameter}: {message}")]
    Numeric { parameter: String, message: String },

    #[error("training diverged at step {step}: loss {loss} exceeded 10x the initial loss {initial} for 50 consecutive steps")]
    Divergence { step: usize, loss: f64, initial: f64 },

    #[error("endpoint failure: {0}")]
    Endpoint(String),

    #[error("no scores to aggregate")]
    EmptyReport,
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn format(source_name: impl Into<String>, record: usize, message: impl Into<String>) -> Self {
        Error::Format {
            source_name: source_name.into(),
            record,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Planning(_) => 2,
            Error::Format { .. } | Error::Io { .. } | Error::Integrity(_) | Error::EmptyReport => 3,
            Error::Endpoint(_) => 4,
            Error::Verification { .. } | Error::Numeric { .. } | Error::Divergence { .. } => 5,
        }
    }
}
