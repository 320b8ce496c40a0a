//! Network-backed policies and the policy input encodings.

use maint_core::{ActionIndex, DecisionContext, Policy, SimRng};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RlError};
use crate::mlp::{log_softmax, MlpParams};

/// What the network sees at each decision.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicyInput {
    /// The current belief vector.
    #[default]
    Belief,
    /// The last `window` observations and actions (for recurrent policies;
    /// no such network ships with this crate).
    History { window: usize },
}

impl PolicyInput {
    /// Input vector for the decision described by `ctx`.
    pub fn encode(&self, ctx: &DecisionContext<'_>) -> Result<Vec<f64>> {
        match self {
            PolicyInput::Belief => Ok(ctx.belief.probs.clone()),
            PolicyInput::History { .. } => {
                Err(RlError::Unsupported("history inputs need a recurrent policy, which is not provided".into()))
            }
        }
    }

    /// Length of the encoded input for `states` hidden states.
    pub fn width(&self, states: usize) -> usize {
        match self {
            PolicyInput::Belief => states,
            PolicyInput::History { window } => 2 * window,
        }
    }
}

/// Draw from a categorical distribution.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Action log-probabilities and value at belief `y`.
pub fn policy_forward(p: &MlpParams, y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let x = ndarray::ArrayView2::from_shape((1, y.len()), y).map_err(|e| RlError::Dimension(e.to_string()))?;
    let cache = p.forward_batch(x)?;
    Ok((log_softmax(cache.logits.row(0)), cache.values[0]))
}

/// Belief-input policy acting greedily (argmax) or by sampling.
#[derive(Debug, Clone)]
pub struct PpoPolicy {
    pub params: MlpParams,
    pub greedy: bool,
}

impl PpoPolicy {
    pub fn action_probs(&self, belief: &[f64]) -> Result<Vec<f64>> {
        Ok(policy_forward(&self.params, belief)?.0.into_iter().map(f64::exp).collect())
    }
}

impl Policy for PpoPolicy {
    fn act(&self, ctx: &DecisionContext<'_>, rng: &mut SimRng) -> ActionIndex {
        // parameters are validated when the policy is built or loaded
        let (logp, _) = policy_forward(&self.params, &ctx.belief.probs).expect("policy network evaluates");
        if self.greedy {
            let mut best = 0;
            for (i, l) in logp.iter().enumerate() {
                if *l > logp[best] {
                    best = i;
                }
            }
            ActionIndex(best)
        } else {
            let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            ActionIndex(sample_action(&probs, rng))
        }
    }
}
