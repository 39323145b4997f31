use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by channel generation, filter updates, training and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Requested power cannot be met with `A + mu*I` positive definite.
    #[error("target power {target} exceeds the reachable supremum {supremum}")]
    Infeasible { target: f64, supremum: f64 },

    #[error("bias factor of user {user} is degenerate (|alpha| = {magnitude:e})")]
    BiasDegenerate { user: usize, magnitude: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
