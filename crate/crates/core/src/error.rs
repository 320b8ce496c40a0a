use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("policy returned action {action} but only {actions} actions exist")]
    InvalidAction { action: usize, actions: usize },

    #[error("initial-step emission requires both previous action and observation to be absent, or both present")]
    InconsistentEmissionArgs,

    #[error(
        "belief update underflow: every emission density vanished \
         (action {action}, z_prev {z_prev}, z_next {z_next}, belief {belief:?})"
    )]
    BeliefUnderflow { action: usize, z_prev: f64, z_next: f64, belief: Vec<f64> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}, byte offset {offset}: {message}")]
    Parse { line: usize, offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;
