use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the library. Every variant names the module
/// that produced it so the CLI can surface the origin on one line.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{module}: {path}:{line}: {msg}")]
    Parse {
        module: &'static str,
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{module}: {msg}")]
    Invalid { module: &'static str, msg: String },

    #[error("{module}: numeric error: {msg}")]
    Numeric { module: &'static str, msg: String },

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            module,
            msg: msg.into(),
        }
    }

    pub fn numeric(module: &'static str, msg: impl Into<String>) -> Self {
        Error::Numeric {
            module,
            msg: msg.into(),
        }
    }

    pub fn parse(
        module: &'static str,
        path: impl Into<String>,
        line: usize,
        msg: impl Into<String>,
    ) -> Self {
        Error::Parse {
            module,
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
