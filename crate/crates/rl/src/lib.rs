//! Belief-input proximal policy optimization for the maintenance POMDP.
//!
//! A small tanh network maps the belief to action logits and a value
//! estimate. Training follows the usual on-policy loop: collect `K` steps of
//! complete episodes, estimate advantages with GAE, run several epochs of
//! clipped-surrogate minibatch updates, and periodically evaluate the greedy
//! policy. With posterior draws as the environment, every episode runs in a
//! freshly drawn model (domain randomization).

pub mod buffer;
pub mod checkpoint;
pub mod error;
pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod train;

pub use buffer::{compute_gae, normalize_advantages, Gae, RolloutBuffer, StepRecord};
pub use checkpoint::Checkpoint;
pub use error::{Result, RlError};
pub use mlp::{ForwardCache, MlpParams};
pub use policy::{policy_forward, PolicyInput, PpoPolicy};
pub use ppo::{policy_gradient, ppo_loss, ppo_update, Batch, LossSpec, LossStats, OptimizerKind, OptimizerState, PpoConfig, UpdateStats};
pub use train::{collect_episode, config_fingerprint, train, EvalPoint, Schedule, TrainEnv, TrainOutcome, TrainReport};
