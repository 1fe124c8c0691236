use thiserror::Error;

/// Errors produced by the simulator library.
#[derive(Debug, Error)]
pub enum VppError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("length error: expected {expected} time-steps, found {actual}")]
    Length { expected: usize, actual: usize },

    #[error("ordering error: timestamp {0} is not after its predecessor")]
    Ordering(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("lifecycle error: {0}")]
    Lifecycle(String),

    #[error("dependency error: {0}")]
    Dependency(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, VppError>;
