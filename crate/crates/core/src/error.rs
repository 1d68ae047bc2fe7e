use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate error: {0}")]
    Coordinate(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("unsupported noise: {0}")]
    UnsupportedNoise(String),

    #[error("pair ({i}, {j}) is masked and carries no value")]
    Masked { i: usize, j: usize },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("staging error: {0}")]
    Staging(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no near-orthonormal basis in chart {chart}: {reason}")]
    BasisFailure { chart: usize, reason: String },

    #[error("simplex grid too fine: {size} points exceeds limit {limit}")]
    TooFine { size: u128, limit: u128 },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
