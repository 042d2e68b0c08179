use std::io;

use thiserror::Error;

/// Errors raised by the engine, the benchmark harness and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration violates a structural invariant.
    #[error("configuration error: {field}: {reason}")]
    Config { field: &'static str, reason: String },

    /// An append would push a head past its pot capacity.
    #[error("capacity error: occupancy {occupancy} + {incoming} incoming exceeds capacity {capacity}")]
    Capacity {
        occupancy: usize,
        incoming: usize,
        capacity: usize,
    },

    /// A rotary position at or beyond the pot capacity was requested.
    #[error("position-domain error: position {position} not below capacity {capacity}")]
    Position { position: usize, capacity: usize },

    /// Index sets handed to a compaction do not satisfy its contract.
    #[error("selection-contract error: {0}")]
    Selection(String),

    /// Shapes of arguments do not line up.
    #[error("contract error: {0}")]
    Contract(String),

    /// An operation was called in the wrong pot state.
    #[error("state error: {0}")]
    State(String),

    /// A required argument was not supplied.
    #[error("missing argument: {0}")]
    MissingArgument(&'static str),

    /// Malformed weight file or other binary payload.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
