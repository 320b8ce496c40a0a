//! Synthetic trajectory datasets and their line-delimited JSON file format.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::fixtures::byte_offset;
use crate::model::{ActionIndex, CostTable, Dims, PomdpParams, Trajectory};
use crate::sim::{simulate_episode, DecisionContext, Policy, SimRng};

/// Threshold-on-observation maintenance heuristic with uniform exploration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPolicy {
    /// Take the strongest repair when the observation drops below this.
    pub renew_below: f64,
    /// Take the minor repair when the observation drops below this.
    pub tamp_below: f64,
    pub explore: f64,
    pub actions: usize,
}

impl Default for BehaviorPolicy {
    fn default() -> Self {
        Self { renew_below: -10.0, tamp_below: -6.0, explore: 0.1, actions: 3 }
    }
}

impl Policy for BehaviorPolicy {
    fn act(&self, ctx: &DecisionContext<'_>, rng: &mut SimRng) -> ActionIndex {
        if rng.random::<f64>() < self.explore {
            return ActionIndex(rng.random_range(0..self.actions));
        }
        let z = ctx.observation();
        let last = self.actions - 1;
        if z < self.renew_below {
            ActionIndex(last)
        } else if z < self.tamp_below {
            ActionIndex(1.min(last))
        } else {
            ActionIndex::DO_NOTHING
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub action_counts: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn from_trajectories(trajectories: Vec<Trajectory>, dims: Dims) -> Self {
        let mut counts = vec![0; dims.actions];
        for t in &trajectories {
            for a in &t.actions {
                counts[a.0] += 1;
            }
        }
        let warnings = counts
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == 0)
            .map(|(a, _)| format!("action a{a} never taken: its transition rows are informed by the prior only"))
            .collect();
        Self { trajectories, meta: DatasetMeta { action_counts: counts, warnings } }
    }
}

/// Simulate `n_series` trajectories of `steps` actions under `behavior`.
pub fn generate_dataset<P: Policy + ?Sized>(
    theta_true: &PomdpParams,
    n_series: usize,
    steps: usize,
    behavior: &P,
    rng: &mut SimRng,
) -> Result<Dataset> {
    if n_series < 1 || steps < 1 {
        return Err(ModelError::InvalidArgument(format!(
            "need n_series >= 1 and steps >= 1 (got {n_series}, {steps})"
        )));
    }
    let dims = theta_true.dims();
    let costs = CostTable { action_cost: vec![vec![0.0; dims.states]; dims.actions], condition_cost: vec![0.0; dims.states] };
    let trajectories = (0..n_series)
        .map(|_| simulate_episode(theta_true, behavior, &costs, steps, rng).map(|r| r.trajectory))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::from_trajectories(trajectories, dims))
}

pub fn write_trajectories(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(trajectories_to_jsonl(trajectories).as_bytes())?;
    Ok(())
}

pub fn trajectories_to_jsonl(trajectories: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajectories {
        out.push_str(&serde_json::to_string(t).expect("trajectory serializes"));
        out.push('\n');
    }
    out
}

/// Parse line-delimited trajectory records; blank lines are skipped.
pub fn parse_trajectories(text: &str) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(line).map_err(|e| ModelError::Parse {
            line: i + 1,
            offset: byte_offset(text, i + 1, e.column()),
            message: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    parse_trajectories(&fs::read_to_string(path)?)
}
