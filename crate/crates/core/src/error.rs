use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside the domain an operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller used an API out of order (e.g. a non-append ledger write).
    #[error("usage error: {0}")]
    Usage(String),

    /// A window of the budget ledger spent more than the total budget.
    #[error("w-event violation: window ending at slot {slot} spends {sum} > {limit}")]
    BudgetViolation { slot: usize, sum: f64, limit: f64 },

    #[error("{path}: row {row}: {msg}")]
    Parse {
        path: PathBuf,
        row: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("dataset `{name}` not found at {path}; download it from {source_url}")]
    DatasetMissing {
        name: String,
        path: PathBuf,
        source_url: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
