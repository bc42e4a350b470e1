use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulator, model builders and training loop.
#[derive(Debug, Error)]
pub enum Error {
    /// A size limit of the simulator or a generator was exceeded.
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// A circuit, model or optimizer was configured inconsistently.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Input data violated a documented precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// Tensor or image shapes do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A backend was asked to handle a gate it does not support.
    #[error("unsupported operation: {0}")]
    Capability(String),

    /// An operation was called in the wrong state (e.g. backward without forward).
    #[error("state error: {0}")]
    State(String),

    /// Training produced a non-finite loss.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {}: {source}", paths_display(.paths))]
    Io {
        paths: Vec<PathBuf>,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn paths_display(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            paths: vec![path.into()],
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Csv(_) => 2,
            Error::Numerical(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
