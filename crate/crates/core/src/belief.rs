//! Exact Bayesian filtering over the hidden states.
//!
//! `b'(s') ∝ p(z' | s', a, z) · Σ_s p(s' | s, a) b(s)`, evaluated with the
//! emission terms in log space (max-subtracted) and renormalized each step.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::{ActionIndex, PomdpParams, StateIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub probs: Vec<f64>,
    pub step: usize,
}

impl Belief {
    pub fn argmax(&self) -> StateIndex {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        StateIndex(best)
    }

    pub fn one_hot(states: usize, s: StateIndex) -> Self {
        let mut probs = vec![0.0; states];
        probs[s.0] = 1.0;
        Self { probs, step: 0 }
    }
}

/// Belief after an update together with `ln p(z' | b, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefUpdate {
    pub belief: Belief,
    pub log_normalizer: f64,
}

/// `b0 = T0`, ignoring `z0`.
pub fn initial_belief(theta: &PomdpParams) -> Belief {
    Belief { probs: theta.transition.initial.clone(), step: 0 }
}

/// `b0 ∝ T0(s) · p(z0 | s)`: the opt-in variant that conditions on the first
/// observation.
pub fn initial_belief_conditioned(theta: &PomdpParams, z0: f64) -> Result<BeliefUpdate> {
    let obs = &theta.observation;
    let log_emit: Vec<f64> = (0..theta.dims().states)
        .map(|s| obs.emission(StateIndex(s), None, None).map(|e| e.ln_density(z0)))
        .collect::<Result<_>>()?;
    reweight(&theta.transition.initial, &log_emit, 0).ok_or_else(|| ModelError::BeliefUnderflow {
        action: usize::MAX,
        z_prev: f64::NAN,
        z_next: z0,
        belief: theta.transition.initial.clone(),
    })
}

/// `ln p(z_next | s_next, a_prev, z_prev)`; `-inf` for `z_next > 0`.
pub fn emission_logdensity(theta: &PomdpParams, s_next: StateIndex, a_prev: ActionIndex, z_prev: f64, z_next: f64) -> f64 {
    theta.observation.transition_emission(s_next, a_prev, z_prev).ln_density(z_next)
}

/// Reweight a predicted state distribution by log emission densities and
/// renormalize. `None` if every supported state has zero density.
pub fn reweight(prior: &[f64], log_emit: &[f64], step: usize) -> Option<BeliefUpdate> {
    let max = log_emit
        .iter()
        .zip(prior)
        .filter(|(_, p)| **p > 0.0)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let mut probs: Vec<f64> = prior.iter().zip(log_emit).map(|(p, l)| p * (l - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    for p in &mut probs {
        *p /= total;
    }
    Some(BeliefUpdate { belief: Belief { probs, step }, log_normalizer: max + total.ln() })
}

/// One Bayes-filter step after taking `a` and observing `z_next`.
pub fn belief_update(b: &Belief, a: ActionIndex, z_prev: f64, z_next: f64, theta: &PomdpParams) -> Result<BeliefUpdate> {
    let states = theta.dims().states;
    let kernel = &theta.transition.kernel[a.0];
    let mut predicted = vec![0.0; states];
    for (s, bs) in b.probs.iter().enumerate() {
        if *bs == 0.0 {
            continue;
        }
        for (next, p) in kernel[s].iter().enumerate() {
            predicted[next] += p * bs;
        }
    }
    let log_emit: Vec<f64> =
        (0..states).map(|s| emission_logdensity(theta, StateIndex(s), a, z_prev, z_next)).collect();
    reweight(&predicted, &log_emit, b.step + 1).ok_or_else(|| ModelError::BeliefUnderflow {
        action: a.0,
        z_prev,
        z_next,
        belief: b.probs.clone(),
    })
}
