use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {layer}: expected {expected}, got {got}")]
    Dimension { layer: String, expected: String, got: String },

    #[error("empty attention context")]
    EmptyAttention,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("validation error at {path}: {message}")]
    Validation { path: String, message: String },

    #[error("agent {agent_id}: {message}")]
    AgentLength { agent_id: u32, message: String },

    #[error("unknown agent id {0}")]
    UnknownAgent(u32),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(layer: impl Into<String>, expected: impl ToString, got: impl ToString) -> Error {
    Error::Dimension { layer: layer.into(), expected: expected.to_string(), got: got.to_string() }
}
