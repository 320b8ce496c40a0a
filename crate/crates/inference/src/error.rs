use maint_core::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("likelihood degenerate in trajectory {trajectory} at step {step}: {reason}")]
    Degenerate { trajectory: usize, step: usize, reason: String },

    #[error("cannot decode unconstrained vector: {0}")]
    Decode(String),

    #[error("invalid prior: {0}")]
    Prior(String),

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid sampler configuration: {0}")]
    Config(String),

    #[error("log density is not finite at the initial point of chain {chain}")]
    NonFiniteInit { chain: usize },

    #[error(
        "{divergent} of {total} post-warmup transitions diverged ({rate:.1}%); \
         consider reparameterizing or raising the target acceptance rate"
    )]
    TooManyDivergences { divergent: usize, total: usize, rate: f64 },

    #[error("need {needed} draws per chain for diagnostics, got {got}")]
    TooFewDraws { needed: usize, got: usize },

    #[error("parse error at line {line}, byte offset {offset}: {message}")]
    Parse { line: usize, offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, InferenceError>;
