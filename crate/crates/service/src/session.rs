//! Interactive episodes, independent of the HTTP layer.

use std::collections::BTreeMap;
use std::sync::Arc;

use maint_core::sim::EpisodeOptions;
use maint_core::solvers::argmax;
use maint_core::{
    backward_induction, belief_update, initial_belief, initial_belief_conditioned, param_seed, qmdp_action, stream_rng,
    ActionIndex, Belief, CostTable, Episode, ParamSource, PomdpParams, QTable, SimRng,
};
use maint_rl::{Checkpoint, PpoPolicy};

use crate::api::{
    ArtifactList, CheckpointInfo, CreateSession, ParamsInfo, ParamsRef, PosteriorInfo, RecommendSource, Recommendation,
    SessionMode, SessionView, StepRequest, StepResponse, SCHEMA_VERSION,
};
use crate::error::{Result, ServiceError};

/// Read-only models, posteriors and networks shared by all sessions.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub params: BTreeMap<String, Arc<PomdpParams>>,
    pub posteriors: BTreeMap<String, Arc<Vec<PomdpParams>>>,
    pub checkpoints: BTreeMap<String, Arc<Checkpoint>>,
    pub costs: CostTable,
    pub horizon: usize,
    /// Discount of the Q-tables behind QMDP recommendations.
    pub gamma: f64,
}

impl Artifacts {
    pub fn new(costs: CostTable, horizon: usize) -> Self {
        Self { params: BTreeMap::new(), posteriors: BTreeMap::new(), checkpoints: BTreeMap::new(), costs, horizon, gamma: 1.0 }
    }

    pub fn with_params(mut self, name: &str, p: PomdpParams) -> Self {
        self.params.insert(name.into(), Arc::new(p));
        self
    }

    pub fn with_posterior(mut self, name: &str, draws: Vec<PomdpParams>) -> Self {
        self.posteriors.insert(name.into(), Arc::new(draws));
        self
    }

    pub fn with_checkpoint(mut self, name: &str, c: Checkpoint) -> Self {
        self.checkpoints.insert(name.into(), Arc::new(c));
        self
    }

    /// All artifacts agree with the cost table's dimensions.
    pub fn validate(&self) -> Result<()> {
        self.costs.validate()?;
        let dims = self.costs.dims();
        let bad = |kind: &str, name: &str| Err(ServiceError::Validation(format!("{kind} {name} does not match the cost table dimensions")));
        for (n, p) in &self.params {
            p.validate()?;
            if p.dims() != dims {
                return bad("parameter set", n);
            }
        }
        for (n, d) in &self.posteriors {
            if d.is_empty() || d.iter().any(|p| p.dims() != dims) {
                return bad("posterior", n);
            }
        }
        for (n, c) in &self.checkpoints {
            if c.states != dims.states || c.actions != dims.actions {
                return bad("checkpoint", n);
            }
        }
        Ok(())
    }

    pub fn list(&self) -> ArtifactList {
        ArtifactList {
            schema_version: SCHEMA_VERSION,
            params: self.params.keys().cloned().collect(),
            posteriors: self.posteriors.iter().map(|(n, d)| PosteriorInfo { name: n.clone(), draws: d.len() }).collect(),
            checkpoints: self
                .checkpoints
                .iter()
                .map(|(n, c)| CheckpointInfo { name: n.clone(), config_fingerprint: c.config_fingerprint.clone() })
                .collect(),
            horizon: self.horizon,
            costs: self.costs.clone(),
        }
    }

    /// The model for a new session and, for posterior sources, the draw index.
    pub fn resolve(&self, r: &ParamsRef, seed: u64) -> Result<(PomdpParams, Option<usize>)> {
        match r {
            ParamsRef::Fixed { artifact } => self
                .params
                .get(artifact)
                .map(|p| ((**p).clone(), None))
                .ok_or(ServiceError::NotFound { what: "parameter set", name: artifact.clone() }),
            ParamsRef::PosteriorDraw { artifact } => {
                let draws = self
                    .posteriors
                    .get(artifact)
                    .ok_or(ServiceError::NotFound { what: "posterior", name: artifact.clone() })?;
                let theta = ParamSource::Draws(draws).sample(&mut stream_rng(param_seed(seed), 0));
                let index = draws.iter().position(|d| std::ptr::eq(d, theta)).expect("draw comes from the set");
                Ok((theta.clone(), Some(index)))
            }
        }
    }
}

enum Process {
    /// Hidden state simulated with the session rng.
    Simulated { episode: Episode, rng: SimRng },
    /// Observations supplied by the operator.
    Operator { belief: Belief },
}

pub struct Session {
    id: String,
    request: CreateSession,
    params_info: ParamsInfo,
    theta: PomdpParams,
    costs: CostTable,
    horizon: usize,
    qtable: QTable,
    process: Process,
    observations: Vec<f64>,
    actions: Vec<ActionIndex>,
    beliefs: Vec<Belief>,
    step_costs: Vec<f64>,
    cumulative: f64,
}

/// Random stream of a session's simulation for `seed`.
pub fn session_rng(seed: u64) -> SimRng {
    stream_rng(seed, 0)
}

fn check_observation(z: f64) -> Result<()> {
    if !z.is_finite() || z > 0.0 {
        return Err(ServiceError::Validation(format!("observation {z} must be finite and non-positive")));
    }
    Ok(())
}

impl Session {
    pub fn create(id: String, request: CreateSession, artifacts: &Artifacts) -> Result<Self> {
        let (theta, draw_index) = artifacts.resolve(&request.params, request.seed)?;
        let costs = artifacts.costs.clone();
        let horizon = artifacts.horizon;
        let qtable = backward_induction(&theta, &costs, horizon, artifacts.gamma)?;
        let (process, z0, b0) = match request.mode {
            SessionMode::Simulated => {
                if request.initial_observation.is_some() {
                    return Err(ServiceError::Validation("initial observation is only accepted in operator mode".into()));
                }
                let mut rng = session_rng(request.seed);
                let options = EpisodeOptions { condition_on_z0: request.condition_on_z0 };
                let episode = Episode::start(theta.clone(), costs.clone(), horizon, options, &mut rng)?;
                let z0 = episode.observations()[0];
                let b0 = episode.belief().clone();
                (Process::Simulated { episode, rng }, z0, b0)
            }
            SessionMode::Operator => {
                let z0 = request
                    .initial_observation
                    .ok_or_else(|| ServiceError::Validation("operator mode needs an initial observation".into()))?;
                check_observation(z0)?;
                let b0 = if request.condition_on_z0 {
                    initial_belief_conditioned(&theta, z0)?.belief
                } else {
                    initial_belief(&theta)
                };
                (Process::Operator { belief: b0.clone() }, z0, b0)
            }
        };
        let params_info = ParamsInfo { reference: request.params.clone(), draw_index };
        Ok(Self {
            id,
            request,
            params_info,
            theta,
            costs,
            horizon,
            qtable,
            process,
            observations: vec![z0],
            actions: Vec::new(),
            beliefs: vec![b0],
            step_costs: Vec::new(),
            cumulative: 0.0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn step_index(&self) -> usize {
        self.actions.len()
    }

    pub fn is_done(&self) -> bool {
        self.step_index() >= self.horizon
    }

    pub fn belief(&self) -> &Belief {
        self.beliefs.last().expect("initial belief present")
    }

    pub fn params(&self) -> &PomdpParams {
        &self.theta
    }

    fn hidden_state(&self) -> Option<usize> {
        match &self.process {
            Process::Simulated { episode, .. } if self.request.debug => Some(episode.hidden_state().0),
            _ => None,
        }
    }

    pub fn step(&mut self, req: &StepRequest) -> Result<StepResponse> {
        if let Some(expected) = req.expected_step {
            if expected != self.step_index() {
                return Err(ServiceError::Conflict(format!(
                    "session is at step {}, request expected step {expected}",
                    self.step_index()
                )));
            }
        }
        if self.is_done() {
            return Err(ServiceError::Conflict(format!("episode finished after {} steps", self.horizon)));
        }
        let actions = self.theta.dims().actions;
        if req.action >= actions {
            return Err(ServiceError::Validation(format!("action {} out of range (0..{actions})", req.action)));
        }
        let action = ActionIndex(req.action);
        let (observation, belief, cost) = match &mut self.process {
            Process::Simulated { episode, rng } => {
                if req.observation.is_some() {
                    return Err(ServiceError::Validation("observations are simulated in this session".into()));
                }
                let out = episode.step(action, rng)?;
                (out.observation, out.belief, out.cost)
            }
            Process::Operator { belief } => {
                let z_next = req
                    .observation
                    .ok_or_else(|| ServiceError::Validation("operator mode needs an observation with every step".into()))?;
                check_observation(z_next)?;
                let z_prev = *self.observations.last().expect("initial observation present");
                // expected reward under the current belief; the true state is unknown
                let cost: f64 = belief.probs.iter().enumerate().map(|(s, p)| p * self.costs.reward(maint_core::StateIndex(s), action)).sum();
                let next = belief_update(belief, action, z_prev, z_next, &self.theta)
                    .map_err(|e| ServiceError::Validation(format!("observation rejected: {e}")))?
                    .belief;
                *belief = next.clone();
                (z_next, next, cost)
            }
        };
        self.observations.push(observation);
        self.actions.push(action);
        self.beliefs.push(belief.clone());
        self.step_costs.push(cost);
        self.cumulative += cost;
        Ok(StepResponse {
            schema_version: SCHEMA_VERSION,
            step: self.step_index() - 1,
            action: req.action,
            observation,
            belief: belief.probs,
            cost,
            cumulative_cost: self.cumulative,
            done: self.is_done(),
            hidden_state: self.hidden_state(),
        })
    }

    pub fn view(&self) -> SessionView {
        let hidden_states = match &self.process {
            Process::Simulated { episode, .. } if self.request.debug => {
                Some(episode.hidden_states().iter().map(|s| s.0).collect())
            }
            _ => None,
        };
        SessionView {
            schema_version: SCHEMA_VERSION,
            id: self.id.clone(),
            mode: self.request.mode,
            params: self.params_info.clone(),
            seed: self.request.seed,
            debug: self.request.debug,
            condition_on_z0: self.request.condition_on_z0,
            step: self.step_index(),
            horizon: self.horizon,
            done: self.is_done(),
            belief: self.belief().probs.clone(),
            observations: self.observations.clone(),
            actions: self.actions.iter().map(|a| a.0).collect(),
            beliefs: self.beliefs.iter().map(|b| b.probs.clone()).collect(),
            step_costs: self.step_costs.clone(),
            cumulative_cost: self.cumulative,
            hidden_state: self.hidden_state(),
            hidden_states,
        }
    }

    pub fn recommend(&self, source: RecommendSource, checkpoint: Option<&str>, artifacts: &Artifacts) -> Result<Recommendation> {
        if self.is_done() {
            return Err(ServiceError::Conflict("episode finished; nothing to recommend".into()));
        }
        let t = self.step_index();
        let b = self.belief();
        let belief_weighted_q = self.qtable.belief_weighted(b, t);
        match source {
            RecommendSource::Qmdp => {
                let action = qmdp_action(&self.qtable, b, t);
                debug_assert_eq!(action, argmax(&belief_weighted_q));
                Ok(Recommendation {
                    schema_version: SCHEMA_VERSION,
                    source,
                    checkpoint: None,
                    step: t,
                    action: action.0,
                    belief_weighted_q,
                    action_probs: None,
                })
            }
            RecommendSource::Ppo => {
                let (name, c) = match checkpoint {
                    Some(n) => (n.to_string(), artifacts.checkpoints.get(n).cloned()),
                    None if artifacts.checkpoints.len() == 1 => {
                        let (n, c) = artifacts.checkpoints.iter().next().expect("one checkpoint");
                        (n.clone(), Some(c.clone()))
                    }
                    None => ("(unnamed)".to_string(), None),
                };
                let c = c.ok_or(ServiceError::NotFound { what: "checkpoint", name: name.clone() })?;
                let probs = PpoPolicy { params: c.params.clone(), greedy: true }.action_probs(&b.probs)?;
                let action = argmax(&probs);
                Ok(Recommendation {
                    schema_version: SCHEMA_VERSION,
                    source,
                    checkpoint: Some(name),
                    step: t,
                    action: action.0,
                    belief_weighted_q,
                    action_probs: Some(probs),
                })
            }
        }
    }
}
