//! Generative episode simulator.
//!
//! An [`Episode`] advances one decision at a time so that batch rollouts, the
//! trainer and interactive sessions all share the same sequence of random
//! draws: `s0 ~ T0`, `z0 ~ O0`, then per step the policy acts (it may consume
//! randomness), the reward is charged on the pre-transition state, then
//! `s' ~ T` and `z' ~ O`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::{belief_update, initial_belief, initial_belief_conditioned, Belief};
use crate::error::{ModelError, Result};
use crate::model::{sample_transition, ActionIndex, CostTable, PomdpParams, StateIndex, Trajectory};

pub type SimRng = ChaCha8Rng;

/// Rng stream `stream` of a run seeded with `seed` (worker/episode `i` gets
/// `seed + i`).
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(stream))
}

/// Everything a policy may look at when choosing an action.
pub struct DecisionContext<'a> {
    pub step: usize,
    pub horizon: usize,
    pub belief: &'a Belief,
    pub observations: &'a [f64],
    pub actions: &'a [ActionIndex],
    /// True state; only full-observability benchmarks should read this.
    pub hidden_state: StateIndex,
}

impl DecisionContext<'_> {
    pub fn observation(&self) -> f64 {
        *self.observations.last().expect("episode has an initial observation")
    }
}

pub trait Policy: Sync {
    fn act(&self, ctx: &DecisionContext<'_>, rng: &mut SimRng) -> ActionIndex;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, ctx: &DecisionContext<'_>, rng: &mut SimRng) -> ActionIndex {
        (**self).act(ctx, rng)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn act(&self, ctx: &DecisionContext<'_>, rng: &mut SimRng) -> ActionIndex {
        (**self).act(ctx, rng)
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy(pub ActionIndex);

impl Policy for ConstantPolicy {
    fn act(&self, _: &DecisionContext<'_>, _: &mut SimRng) -> ActionIndex {
        self.0
    }
}

/// Uniformly random action.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub actions: usize,
}

impl Policy for RandomPolicy {
    fn act(&self, _: &DecisionContext<'_>, rng: &mut SimRng) -> ActionIndex {
        ActionIndex(rng.random_range(0..self.actions))
    }
}

/// Replays a fixed action list (falls back to do-nothing past its end).
#[derive(Debug, Clone)]
pub struct ScriptedPolicy(pub Vec<ActionIndex>);

impl Policy for ScriptedPolicy {
    fn act(&self, ctx: &DecisionContext<'_>, _: &mut SimRng) -> ActionIndex {
        self.0.get(ctx.step).copied().unwrap_or(ActionIndex::DO_NOTHING)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeOptions {
    /// Condition the initial belief on `z0` instead of using `T0` alone.
    pub condition_on_z0: bool,
}

/// Result of one decision step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub action: ActionIndex,
    pub cost: f64,
    pub cumulative_cost: f64,
    pub observation: f64,
    pub belief: Belief,
    pub done: bool,
}

/// An in-progress episode with recorded history.
#[derive(Debug, Clone)]
pub struct Episode {
    params: PomdpParams,
    costs: CostTable,
    horizon: usize,
    state: StateIndex,
    belief: Belief,
    observations: Vec<f64>,
    actions: Vec<ActionIndex>,
    hidden_states: Vec<StateIndex>,
    beliefs: Vec<Belief>,
    step_costs: Vec<f64>,
    total_cost: f64,
}

impl Episode {
    pub fn start(params: PomdpParams, costs: CostTable, horizon: usize, options: EpisodeOptions, rng: &mut SimRng) -> Result<Self> {
        if horizon < 1 {
            return Err(ModelError::InvalidArgument("horizon must be at least 1".into()));
        }
        if costs.dims() != params.dims() {
            return Err(ModelError::Dimension(format!(
                "cost table is {:?} but parameters are {:?}",
                costs.dims(),
                params.dims()
            )));
        }
        let state = params.transition.sample_initial(rng);
        let z0 = params.observation.emission(state, None, None)?.sample(rng);
        let belief = if options.condition_on_z0 {
            initial_belief_conditioned(&params, z0)?.belief
        } else {
            initial_belief(&params)
        };
        Ok(Self {
            params,
            costs,
            horizon,
            state,
            beliefs: vec![belief.clone()],
            belief,
            observations: vec![z0],
            actions: Vec::with_capacity(horizon),
            hidden_states: vec![state],
            step_costs: Vec::with_capacity(horizon),
            total_cost: 0.0,
        })
    }

    pub fn params(&self) -> &PomdpParams {
        &self.params
    }

    pub fn step_index(&self) -> usize {
        self.actions.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_done(&self) -> bool {
        self.actions.len() >= self.horizon
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    pub fn hidden_state(&self) -> StateIndex {
        self.state
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn actions(&self) -> &[ActionIndex] {
        &self.actions
    }

    /// States visited so far, starting with `s0`.
    pub fn hidden_states(&self) -> &[StateIndex] {
        &self.hidden_states
    }

    pub fn beliefs(&self) -> &[Belief] {
        &self.beliefs
    }

    pub fn step_costs(&self) -> &[f64] {
        &self.step_costs
    }

    pub fn total_cost(&self) -> f64 {
        self.total_cost
    }

    pub fn context(&self) -> DecisionContext<'_> {
        DecisionContext {
            step: self.actions.len(),
            horizon: self.horizon,
            belief: &self.belief,
            observations: &self.observations,
            actions: &self.actions,
            hidden_state: self.state,
        }
    }

    /// Apply `action`, transition the hidden state and draw the next observation.
    pub fn step(&mut self, action: ActionIndex, rng: &mut SimRng) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(ModelError::InvalidArgument("episode already finished".into()));
        }
        let dims = self.params.dims();
        if action.0 >= dims.actions {
            return Err(ModelError::InvalidAction { action: action.0, actions: dims.actions });
        }
        let cost = self.costs.reward(self.state, action);
        let next = sample_transition(&self.params.transition, self.state, action, rng);
        let z_prev = self.observation();
        let z_next = self.params.observation.transition_emission(next, action, z_prev).sample(rng);
        let update = belief_update(&self.belief, action, z_prev, z_next, &self.params)?;
        self.state = next;
        self.belief = update.belief;
        self.observations.push(z_next);
        self.actions.push(action);
        self.hidden_states.push(next);
        self.beliefs.push(self.belief.clone());
        self.step_costs.push(cost);
        self.total_cost += cost;
        Ok(StepOutcome {
            action,
            cost,
            cumulative_cost: self.total_cost,
            observation: z_next,
            belief: self.belief.clone(),
            done: self.is_done(),
        })
    }

    /// Let `policy` choose, then [`Episode::step`].
    pub fn step_policy<P: Policy + ?Sized>(&mut self, policy: &P, rng: &mut SimRng) -> Result<StepOutcome> {
        let action = policy.act(&self.context(), rng);
        self.step(action, rng)
    }

    fn observation(&self) -> f64 {
        *self.observations.last().expect("initial observation present")
    }

    pub fn into_record(self) -> EpisodeRecord {
        EpisodeRecord {
            trajectory: Trajectory {
                observations: self.observations,
                actions: self.actions,
                hidden_states: Some(self.hidden_states),
            },
            beliefs: self.beliefs,
            step_costs: self.step_costs,
            total_cost: self.total_cost,
        }
    }
}

/// A finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub trajectory: Trajectory,
    pub beliefs: Vec<Belief>,
    pub step_costs: Vec<f64>,
    pub total_cost: f64,
}

/// Roll out exactly `horizon` decisions of `policy` in the POMDP `theta`.
pub fn simulate_episode<P: Policy + ?Sized>(
    theta: &PomdpParams,
    policy: &P,
    costs: &CostTable,
    horizon: usize,
    rng: &mut SimRng,
) -> Result<EpisodeRecord> {
    simulate_episode_with(theta, policy, costs, horizon, EpisodeOptions::default(), rng)
}

pub fn simulate_episode_with<P: Policy + ?Sized>(
    theta: &PomdpParams,
    policy: &P,
    costs: &CostTable,
    horizon: usize,
    options: EpisodeOptions,
    rng: &mut SimRng,
) -> Result<EpisodeRecord> {
    let mut ep = Episode::start(theta.clone(), costs.clone(), horizon, options, rng)?;
    while !ep.is_done() {
        ep.step_policy(policy, rng)?;
    }
    Ok(ep.into_record())
}
