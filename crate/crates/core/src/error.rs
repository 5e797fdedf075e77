use thiserror::Error;

/// Errors produced by the tensor GEE library.
#[derive(Debug, Error)]
pub enum TgeeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mode {mode} out of range for a {order}-way tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("zero variance at subject {subject}, time {time} (degenerate fitted mean)")]
    ZeroVariance { subject: usize, time: usize },

    #[error("working correlation is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("failed to parse {file}: {msg}")]
    Parse { file: String, msg: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TgeeError>;
