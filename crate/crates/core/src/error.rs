use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("tensor file contains no entries")]
    EmptyTensor,

    #[error("duplicate index {index:?} (lines {first} and {second})")]
    DuplicateIndex {
        index: Vec<usize>,
        first: usize,
        second: usize,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("mode {mode} out of range for a {order}-way tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("index {index:?} out of range for dims {dims:?}")]
    IndexOutOfRange { index: Vec<usize>, dims: Vec<usize> },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rank must be at least 1")]
    ZeroRank,

    #[error("factor {mode} column {column} sums to zero")]
    ZeroColumn { mode: usize, column: usize },

    #[error("dense size {size} exceeds the cap of {cap} cells")]
    DenseTooLarge { size: f64, cap: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("invalid value {value} for parameter `{parameter}`: {reason}")]
    InvalidParameterValue {
        parameter: String,
        value: f64,
        reason: String,
    },

    #[error("invalid plan: {0}")]
    Plan(String),

    #[error("no records to report")]
    NoRecords,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
