//! Finite-horizon dynamic programming on the fully observable MDP, and the
//! policies built on it.

use serde::{Deserialize, Serialize};

use crate::belief::Belief;
use crate::error::{ModelError, Result};
use crate::model::{ActionIndex, CostTable, PomdpParams, StateIndex};
use crate::sim::{DecisionContext, Policy, SimRng};

/// Time-indexed action values, `q[t][s][a]` for `t = 0..=H` with `q[H] = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub q: Vec<Vec<Vec<f64>>>,
}

impl QTable {
    pub fn horizon(&self) -> usize {
        self.q.len() - 1
    }

    pub fn states(&self) -> usize {
        self.q[0].len()
    }

    pub fn actions(&self) -> usize {
        self.q[0][0].len()
    }

    pub fn value(&self, t: usize, s: StateIndex) -> f64 {
        self.q[t][s.0].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `Σ_s b(s) q[t][s][a]` for every action.
    pub fn belief_weighted(&self, b: &Belief, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.actions()];
        for (row, p) in self.q[t].iter().zip(&b.probs) {
            for (o, q) in out.iter_mut().zip(row) {
                *o += p * q;
            }
        }
        out
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> ActionIndex {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    ActionIndex(best)
}

pub fn backward_induction(theta: &PomdpParams, costs: &CostTable, horizon: usize, gamma: f64) -> Result<QTable> {
    if horizon < 1 {
        return Err(ModelError::InvalidArgument("horizon must be at least 1".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(ModelError::InvalidParameter(format!("discount {gamma} outside (0, 1]")));
    }
    let dims = theta.dims();
    if costs.dims() != dims {
        return Err(ModelError::Dimension(format!("cost table {:?} does not match model {:?}", costs.dims(), dims)));
    }
    let (states, actions) = (dims.states, dims.actions);
    let mut q = vec![vec![vec![0.0; actions]; states]; horizon + 1];
    for t in (0..horizon).rev() {
        let next: Vec<f64> =
            q[t + 1].iter().map(|row: &Vec<f64>| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
        for s in 0..states {
            for a in 0..actions {
                let row = theta.transition.row(StateIndex(s), ActionIndex(a));
                let cont: f64 = row.iter().zip(&next).map(|(p, v)| p * v).sum();
                q[t][s][a] = costs.reward(StateIndex(s), ActionIndex(a)) + gamma * cont;
            }
        }
    }
    Ok(QTable { q })
}

pub fn optimal_mdp_action(qt: &QTable, s: StateIndex, t: usize) -> ActionIndex {
    argmax(&qt.q[t][s.0])
}

pub fn qmdp_action(qt: &QTable, b: &Belief, t: usize) -> ActionIndex {
    argmax(&qt.belief_weighted(b, t))
}

/// Steps past the table's horizon reuse its last decision slice.
fn slice(qt: &QTable, step: usize) -> usize {
    step.min(qt.horizon() - 1)
}

/// Full-observability benchmark: acts on the true hidden state.
#[derive(Debug, Clone)]
pub struct OptimalMdpPolicy(pub QTable);

impl Policy for OptimalMdpPolicy {
    fn act(&self, ctx: &DecisionContext<'_>, _rng: &mut SimRng) -> ActionIndex {
        optimal_mdp_action(&self.0, ctx.hidden_state, slice(&self.0, ctx.step))
    }
}

#[derive(Debug, Clone)]
pub struct QmdpPolicy(pub QTable);

impl Policy for QmdpPolicy {
    fn act(&self, ctx: &DecisionContext<'_>, _rng: &mut SimRng) -> ActionIndex {
        qmdp_action(&self.0, ctx.belief, slice(&self.0, ctx.step))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::theta_true;

    #[test]
    fn one_step_horizon_is_reward() {
        let costs = CostTable::railway();
        let qt = backward_induction(&theta_true(), &costs, 1, 1.0).unwrap();
        for s in 0..4 {
            for a in 0..3 {
                assert_eq!(qt.q[0][s][a], costs.reward(StateIndex(s), ActionIndex(a)));
                assert_eq!(qt.q[1][s][a], 0.0);
            }
        }
    }

    #[test]
    fn identity_kernel_accumulates_condition_cost() {
        let mut theta = theta_true();
        for a in 0..3 {
            for s in 0..4 {
                theta.transition.kernel[a][s] = (0..4).map(|j| if j == s { 1.0 } else { 0.0 }).collect();
            }
        }
        let mut costs = CostTable::railway();
        // make repairs unattractive so the do-nothing chain is optimal
        for a in 1..3 {
            for c in &mut costs.action_cost[a] {
                *c = -1e9;
            }
        }
        let h = 7;
        let qt = backward_induction(&theta, &costs, h, 1.0).unwrap();
        for s in 0..4 {
            let expect = h as f64 * (costs.action_cost[0][s] + costs.condition_cost[s]);
            assert!((qt.q[0][s][0] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_and_ties() {
        let qt = QTable { q: vec![vec![vec![-5.0, -3.0, -9.0], vec![-3.0, -3.0, -9.0]], vec![vec![0.0; 3]; 2]] };
        assert_eq!(optimal_mdp_action(&qt, StateIndex(0), 0), ActionIndex(1));
        assert_eq!(optimal_mdp_action(&qt, StateIndex(1), 0), ActionIndex(0));
    }

    #[test]
    fn uniform_belief_picks_best_average() {
        let qt = QTable { q: vec![vec![vec![-1.0, -10.0, -4.0], vec![-10.0, -1.0, -4.0]], vec![vec![0.0; 3]; 2]] };
        let b = Belief { probs: vec![0.5, 0.5], step: 0 };
        assert_eq!(qmdp_action(&qt, &b, 0), ActionIndex(2));
    }

    #[test]
    fn one_hot_qmdp_matches_mdp_on_fixture() {
        let qt = backward_induction(&theta_true(), &CostTable::railway(), 50, 1.0).unwrap();
        for t in 0..50 {
            for s in 0..4 {
                let b = Belief::one_hot(4, StateIndex(s));
                assert_eq!(qmdp_action(&qt, &b, t), optimal_mdp_action(&qt, StateIndex(s), t));
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let theta = theta_true();
        let costs = CostTable::railway();
        assert!(backward_induction(&theta, &costs, 0, 1.0).is_err());
        assert!(backward_induction(&theta, &costs, 5, 0.0).is_err());
        assert!(backward_induction(&theta, &costs, 5, 1.5).is_err());
    }
}
