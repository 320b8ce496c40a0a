//! POMDP model of a deteriorating asset under maintenance decisions.
//!
//! Hidden condition states evolve under action-conditioned transition
//! kernels and emit non-positive observations from truncated Student-t
//! processes. The crate provides the model types, an episode simulator, the
//! exact belief filter, finite-horizon dynamic-programming solvers and a
//! Monte Carlo evaluation harness.

pub mod belief;
pub mod dataset;
pub mod dual;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod model;
pub mod sim;
pub mod solvers;
pub mod tdist;

pub use belief::{belief_update, initial_belief, initial_belief_conditioned, Belief, BeliefUpdate};
pub use error::{ModelError, Result};
pub use eval::{evaluate_policy, evaluate_policy_with, param_seed, EvalOptions, EvalStats, ParamSource};
pub use model::{
    reward, ActionIndex, CostTable, Dims, ObservationModel, PomdpParams, StateIndex, Trajectory, TransitionModel,
};
pub use sim::{simulate_episode, stream_rng, DecisionContext, Episode, Policy, SimRng};
pub use solvers::{backward_induction, optimal_mdp_action, qmdp_action, OptimalMdpPolicy, QTable, QmdpPolicy};
pub use tdist::{StudentParams, TruncatedTParams};
