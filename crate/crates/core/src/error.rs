//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Reading or writing a file failed.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A data file (triples, aliases, checkpoint, dataset) is malformed.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Vocabulary or id lookup failed against loaded data.
    #[error("data error: {0}")]
    Data(String),

    /// Invalid or incomplete configuration (missing role binding,
    /// unresolved theta0, bad flag combination).
    #[error("config error: {0}")]
    Config(String),

    /// Caller passed an argument that violates an operation's contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A prompt template could not be parsed or rendered.
    #[error("template error: {0}")]
    Template(String),

    /// An LLM backend call failed after retries, attributed to a role.
    #[error("backend failure for role {role}: {msg}")]
    Backend { role: String, msg: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
