use thiserror::Error;

/// Errors raised anywhere in the search engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("rank error: {0}")]
    Rank(String),
    #[error("backward already ran on this tape; reset before calling it again")]
    BackwardTwice,
    #[error("topology error: {0}")]
    Topology(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("sequence-length error: {0}")]
    SequenceLength(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("architecture infeasible: {0}")]
    Infeasible(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("startup error: {0}")]
    Startup(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
