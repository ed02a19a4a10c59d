use thiserror::Error;

/// Errors raised by estimation, ingestion and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("empty arm: {0}")]
    EmptyArm(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("cannot parse `{value}` in column `{column}` as a number")]
    Parse { column: String, value: String },

    #[error("value {value} outside [{min}, {max}] and not a nonresponse code for `{column}`")]
    OutOfRange {
        column: String,
        value: i64,
        min: i64,
        max: i64,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
