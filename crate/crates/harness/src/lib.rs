//! Experiment driver for the maintenance POMDP toolkit.
//!
//! A pipeline runs `generate` (synthetic trajectories), `infer` (posterior
//! draws), `train` (belief-input PPO, optionally domain randomized over the
//! draws), then `evaluate` or `compare`. Each stage reads its inputs from the
//! paths in an [`ExperimentConfig`], writes its output next to a metadata
//! sidecar, and refuses inputs whose lineages disagree.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;
pub mod table;

pub use artifact::{append_result, read_meta, read_results, ArtifactMeta, ResultRecord, ResultsLock};
pub use commands::{
    cmd_compare, cmd_evaluate, cmd_generate, cmd_infer, cmd_rollout, cmd_train, load_posterior, serve_artifacts, Context,
    EpisodeTrace, EvalRequest, EvalSetup, InferOutcome, Method, Posterior, TrainSummary,
};
pub use config::{Environment, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use table::{Format, ResultTable, TableRow};
