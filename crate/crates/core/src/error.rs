use std::io;

use thiserror::Error;

/// Errors raised across the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum NpgdError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("dimension error: {axis} has size {size}, {requirement}")]
    Dimension {
        axis: &'static str,
        size: usize,
        requirement: &'static str,
    },
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupted file: {0}")]
    Corruption(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("solver error: {0}")]
    Solver(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl NpgdError {
    /// Process exit code: 2 for configuration/contract problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            NpgdError::Config(_)
            | NpgdError::Contract(_)
            | NpgdError::Unsupported(_)
            | NpgdError::Parameter(_)
            | NpgdError::Shape(_)
            | NpgdError::Dimension { .. }
            | NpgdError::EmptyDataset(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, NpgdError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(NpgdError::Shape(msg.into()))
}
