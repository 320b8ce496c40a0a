//! Posterior inference for the maintenance POMDP: marginal likelihood by the
//! forward algorithm, structured priors, unconstrained reparameterization,
//! NUTS and random-walk samplers, convergence diagnostics and draw storage.

pub mod diagnostics;
pub mod draws;
pub mod error;
pub mod likelihood;
pub mod mcmc;
pub mod nuts;
pub mod posterior;
pub mod priors;
pub mod transform;

pub use diagnostics::{diagnostics, Diagnostics, SamplerStats};
pub use draws::{load_draws, posterior_point, save_draws, DrawRecord, DrawsHeader, PointKind, PosteriorDraws};
pub use error::{InferenceError, Result};
pub use likelihood::{dataset_loglik, forward_loglik, trajectory_loglik, EmissionMode};
pub use mcmc::{run_mcmc, run_mcmc_target, McmcConfig, SamplerKind};
pub use nuts::NutsConfig;
pub use posterior::{GradientMode, LogDensity, PosteriorTarget};
pub use priors::PriorConfig;
pub use transform::Layout;
