//! POMDP domain types: indices, costs, transition and observation models.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::tdist::{StudentParams, TruncatedTParams};

pub const DEFAULT_STATES: usize = 4;
pub const DEFAULT_ACTIONS: usize = 3;

const SIMPLEX_TOL: f64 = 1e-12;

/// Hidden condition grade, `0` = perfect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateIndex(pub usize);

/// Maintenance action; `0` is do-nothing and every other index is a repair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionIndex(pub usize);

impl ActionIndex {
    pub const DO_NOTHING: ActionIndex = ActionIndex(0);

    pub fn is_repair(self) -> bool {
        self.0 > 0
    }
}

impl fmt::Display for StateIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl fmt::Display for ActionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// Number of hidden states and actions of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub states: usize,
    pub actions: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self { states: DEFAULT_STATES, actions: DEFAULT_ACTIONS }
    }
}

impl Dims {
    pub fn new(states: usize, actions: usize) -> Result<Self> {
        if states < 1 || actions < 1 {
            return Err(ModelError::Dimension(format!(
                "need at least one state and one action (got S={states}, A={actions})"
            )));
        }
        Ok(Self { states, actions })
    }
}

/// Per-step costs, all non-positive. Row `a0` of `action_cost` is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    /// `action_cost[a][s]`
    pub action_cost: Vec<Vec<f64>>,
    pub condition_cost: Vec<f64>,
}

impl CostTable {
    /// The railway maintenance cost table (4 states, 3 actions).
    pub fn railway() -> Self {
        Self {
            action_cost: vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![-50.0, -50.0, -50.0, -50.0],
                vec![-2_050.0, -2_710.0, -3_370.0, -4_050.0],
            ],
            condition_cost: vec![-100.0, -200.0, -1_000.0, -8_000.0],
        }
    }

    pub fn dims(&self) -> Dims {
        Dims { states: self.condition_cost.len(), actions: self.action_cost.len() }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.condition_cost.len();
        if self.action_cost.iter().any(|r| r.len() != s) {
            return Err(ModelError::Dimension("cost rows must all have S entries".into()));
        }
        let all = self.action_cost.iter().flatten().chain(&self.condition_cost);
        if all.clone().any(|c| !c.is_finite() || *c > 0.0) {
            return Err(ModelError::InvalidParameter("costs must be finite and <= 0".into()));
        }
        if self.action_cost.first().is_some_and(|r| r.iter().any(|c| *c != 0.0)) {
            return Err(ModelError::InvalidParameter("do-nothing action must cost 0".into()));
        }
        Ok(())
    }

    /// Per-step reward: action cost plus condition cost of the pre-transition state.
    pub fn reward(&self, s: StateIndex, a: ActionIndex) -> f64 {
        self.action_cost[a.0][s.0] + self.condition_cost[s.0]
    }
}

/// Per-step reward `R(s, a)`; see [`CostTable::reward`].
pub fn reward(s: StateIndex, a: ActionIndex, costs: &CostTable) -> f64 {
    costs.reward(s, a)
}

fn check_simplex(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(ModelError::InvalidParameter(format!("{what}: entries must lie in [0, 1] ({row:?})")));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(ModelError::InvalidParameter(format!("{what}: entries sum to {sum}, not 1")));
    }
    Ok(())
}

fn sample_categorical<G: Rng + ?Sized>(probs: &[f64], rng: &mut G) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap at the top: take the last supported entry
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Initial-state distribution and action-conditioned transition kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub initial: Vec<f64>,
    /// `kernel[a][s][s']` = p(s' | s, a)
    pub kernel: Vec<Vec<Vec<f64>>>,
}

impl TransitionModel {
    pub fn dims(&self) -> Dims {
        Dims { states: self.initial.len(), actions: self.kernel.len() }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.initial.len();
        check_simplex(&self.initial, "initial distribution")?;
        for (a, mat) in self.kernel.iter().enumerate() {
            if mat.len() != s || mat.iter().any(|r| r.len() != s) {
                return Err(ModelError::Dimension(format!("transition matrix for a{a} is not {s}x{s}")));
            }
            for (i, row) in mat.iter().enumerate() {
                check_simplex(row, &format!("transition row a{a}/s{i}"))?;
            }
        }
        Ok(())
    }

    pub fn row(&self, s: StateIndex, a: ActionIndex) -> &[f64] {
        &self.kernel[a.0][s.0]
    }

    pub fn sample_initial<G: Rng + ?Sized>(&self, rng: &mut G) -> StateIndex {
        StateIndex(sample_categorical(&self.initial, rng))
    }
}

/// Categorical draw of the next state from `p(.|s, a)`.
pub fn sample_transition<G: Rng + ?Sized>(
    model: &TransitionModel,
    s: StateIndex,
    a: ActionIndex,
    rng: &mut G,
) -> StateIndex {
    StateIndex(sample_categorical(model.row(s, a), rng))
}

/// Which emission process generated an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Initial,
    /// Increment process after do-nothing.
    Deterioration,
    /// Autoregressive process after repair action `a` (>= 1).
    Repair(ActionIndex),
}

impl Regime {
    pub fn after(a_prev: ActionIndex) -> Self {
        if a_prev.is_repair() {
            Regime::Repair(a_prev)
        } else {
            Regime::Deterioration
        }
    }
}

/// A resolved emission: `z = shift + x` with `x ~ dist`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emission {
    pub dist: TruncatedTParams,
    pub shift: f64,
}

impl Emission {
    pub fn ln_density(&self, z: f64) -> f64 {
        if z > 0.0 {
            return f64::NEG_INFINITY;
        }
        crate::tdist::ln_truncated_t(z - self.shift, self.dist.loc, self.dist.scale, self.dist.dof, self.dist.upper_bound)
    }

    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G) -> f64 {
        (self.shift + self.dist.sample(rng)).min(0.0)
    }
}

/// Truncated Student-t observation processes (initial, deterioration, repair).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    /// First-observation process per state, truncated at 0.
    pub initial: Vec<StudentParams>,
    /// Increment process per state, truncated at `-z_prev`.
    pub deterioration: Vec<StudentParams>,
    /// Post-repair process per state, located at `k * z_prev + loc`, truncated at 0.
    pub repair: Vec<StudentParams>,
    /// Autoregressive coefficient per repair action (`a1`, `a2`, ...).
    pub ar_coeff: Vec<f64>,
}

impl ObservationModel {
    pub fn validate(&self, dims: Dims) -> Result<()> {
        for (name, group) in [("initial", &self.initial), ("deterioration", &self.deterioration), ("repair", &self.repair)] {
            if group.len() != dims.states {
                return Err(ModelError::Dimension(format!("{name} group has {} entries, expected {}", group.len(), dims.states)));
            }
            for p in group {
                p.validate()?;
            }
        }
        if self.ar_coeff.len() != dims.actions - 1 {
            return Err(ModelError::Dimension(format!(
                "expected {} autoregressive coefficients, got {}",
                dims.actions - 1,
                self.ar_coeff.len()
            )));
        }
        if self.ar_coeff.iter().any(|k| !(0.0..=1.0).contains(k)) {
            return Err(ModelError::InvalidParameter(format!("ar coefficients must lie in [0, 1] ({:?})", self.ar_coeff)));
        }
        Ok(())
    }

    /// Resolve the emission distribution for `s_next` given the previous
    /// action and observation (both `None` at the first step).
    pub fn emission(&self, s_next: StateIndex, a_prev: Option<ActionIndex>, z_prev: Option<f64>) -> Result<Emission> {
        match (a_prev, z_prev) {
            (None, None) => Ok(Emission { dist: self.initial[s_next.0].truncated(0.0), shift: 0.0 }),
            (Some(a), Some(z)) => Ok(self.transition_emission(s_next, a, z)),
            _ => Err(ModelError::InconsistentEmissionArgs),
        }
    }

    pub fn transition_emission(&self, s_next: StateIndex, a_prev: ActionIndex, z_prev: f64) -> Emission {
        match Regime::after(a_prev) {
            Regime::Repair(a) => {
                let p = self.repair[s_next.0];
                let k = self.ar_coeff[a.0 - 1];
                Emission { dist: TruncatedTParams { loc: k * z_prev + p.loc, scale: p.scale, dof: p.dof, upper_bound: 0.0 }, shift: 0.0 }
            }
            _ => Emission { dist: self.deterioration[s_next.0].truncated(-z_prev), shift: z_prev },
        }
    }
}

/// Draw an observation for `s_next`; see [`ObservationModel::emission`] for routing.
pub fn sample_observation<G: Rng + ?Sized>(
    obs: &ObservationModel,
    s_next: StateIndex,
    a_prev: Option<ActionIndex>,
    z_prev: Option<f64>,
    rng: &mut G,
) -> Result<f64> {
    Ok(obs.emission(s_next, a_prev, z_prev)?.sample(rng))
}

/// Full parameter set of the POMDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PomdpParams {
    pub transition: TransitionModel,
    pub observation: ObservationModel,
}

impl PomdpParams {
    pub fn dims(&self) -> Dims {
        self.transition.dims()
    }

    pub fn validate(&self) -> Result<()> {
        self.transition.validate()?;
        self.observation.validate(self.dims())
    }
}

/// Alternating observation/action sequence `(z0, a0, ..., a_{T-1}, z_T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub observations: Vec<f64>,
    pub actions: Vec<ActionIndex>,
    pub hidden_states: Option<Vec<StateIndex>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        if self.observations.len() != self.actions.len() + 1 {
            return Err(ModelError::InvalidTrajectory(format!(
                "{} observations for {} actions",
                self.observations.len(),
                self.actions.len()
            )));
        }
        if let Some((i, z)) = self.observations.iter().enumerate().find(|(_, z)| !z.is_finite() || **z > 0.0) {
            return Err(ModelError::InvalidTrajectory(format!("observation {i} = {z} is not a finite value <= 0")));
        }
        if let Some(a) = self.actions.iter().find(|a| a.0 >= dims.actions) {
            return Err(ModelError::InvalidTrajectory(format!("action {a} out of range")));
        }
        if let Some(hs) = &self.hidden_states {
            if hs.len() != self.observations.len() {
                return Err(ModelError::InvalidTrajectory("hidden_states length differs from observations".into()));
            }
            if let Some(s) = hs.iter().find(|s| s.0 >= dims.states) {
                return Err(ModelError::InvalidTrajectory(format!("hidden state {s} out of range")));
            }
        }
        Ok(())
    }
}
