//! Request and response bodies.

use maint_core::CostTable;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Where a session's model parameters come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ParamsRef {
    /// A loaded point estimate.
    Fixed { artifact: String },
    /// One draw, picked by the session seed, from a loaded posterior.
    PosteriorDraw { artifact: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    /// Observations are simulated from the session's hidden state.
    #[default]
    Simulated,
    /// Observations are entered with every step; no hidden state exists.
    Operator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub params: ParamsRef,
    #[serde(default)]
    pub mode: SessionMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub debug: bool,
    /// Condition the initial belief on `z0`.
    #[serde(default)]
    pub condition_on_z0: bool,
    /// First observation; required in operator mode, refused otherwise.
    #[serde(default)]
    pub initial_observation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    pub action: usize,
    #[serde(default)]
    pub observation: Option<f64>,
    /// When given, the step is refused unless the session is at this index.
    #[serde(default)]
    pub expected_step: Option<usize>,
}

/// Parameters actually used by a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsInfo {
    #[serde(flatten)]
    pub reference: ParamsRef,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draw_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub schema_version: u32,
    pub id: String,
    pub mode: SessionMode,
    pub params: ParamsInfo,
    pub seed: u64,
    pub debug: bool,
    pub condition_on_z0: bool,
    pub step: usize,
    pub horizon: usize,
    pub done: bool,
    pub belief: Vec<f64>,
    pub observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub beliefs: Vec<Vec<f64>>,
    pub step_costs: Vec<f64>,
    pub cumulative_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_state: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_states: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub schema_version: u32,
    /// Index of the step just taken.
    pub step: usize,
    pub action: usize,
    pub observation: f64,
    pub belief: Vec<f64>,
    pub cost: f64,
    pub cumulative_cost: f64,
    pub done: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_state: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommendSource {
    Qmdp,
    Ppo,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct RecommendQuery {
    pub source: RecommendSource,
    /// Checkpoint name for `source=ppo`; the only loaded one when omitted.
    #[serde(default)]
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub schema_version: u32,
    pub source: RecommendSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub step: usize,
    pub action: usize,
    /// `Σ_s b(s) Q_t(s, a)` from the session model's finite-horizon Q-table.
    pub belief_weighted_q: Vec<f64>,
    /// Action probabilities of the network (PPO only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorInfo {
    pub name: String,
    pub draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub name: String,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactList {
    pub schema_version: u32,
    pub params: Vec<String>,
    pub posteriors: Vec<PosteriorInfo>,
    pub checkpoints: Vec<CheckpointInfo>,
    pub horizon: usize,
    pub costs: CostTable,
}
