use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undefined estimate: {0}")]
    Undefined(String),

    #[error("unsupported schema version {found:?} (expected {expected:?})")]
    Schema { found: String, expected: String },

    #[error("malformed record at line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("training aborted: {0}")]
    Training(String),

    #[error("constraint hash mismatch: artifact built for {policy}, catalog uses {catalog}")]
    ConstraintMismatch { policy: String, catalog: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
