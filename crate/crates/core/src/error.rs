use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic number: expected {expected:#010x}, found {actual:#010x}")]
    Magic { expected: u32, actual: u32 },

    #[error("truncated input: expected {expected} bytes, found {actual}")]
    Length { expected: usize, actual: usize },

    #[error("dimension mismatch: expected {expected}, found {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("class {class} has {available} members, {requested} requested")]
    Capacity {
        class: u8,
        available: usize,
        requested: usize,
    },

    #[error("row {row} is degenerate: all distances to other points are zero")]
    DegenerateRow { row: usize },

    #[error("dimension {dim} has zero range")]
    DegenerateBox { dim: usize },

    #[error("optimization diverged at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("{count} ids are not in the user base, first: {first:?}")]
    UnknownIds { count: usize, first: Vec<u64> },

    #[error("empty pool after excluding the seed audience")]
    EmptyPool,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
