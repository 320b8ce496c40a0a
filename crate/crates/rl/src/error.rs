use maint_core::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite {0}")]
    NonFinite(String),

    #[error("non-finite PPO loss; update aborted (minibatch fingerprint {fingerprint})")]
    NonFiniteLoss { fingerprint: String },

    #[error("rollout buffer: {0}")]
    Buffer(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unsupported policy input: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RlError>;
