//! Clipped-surrogate PPO loss, its gradient and the minibatch update.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::buffer::{compute_gae, normalize_advantages, RolloutBuffer};
use crate::error::{Result, RlError};
use crate::mlp::{log_softmax, MlpParams};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain gradient descent (used to check limits of the update rule).
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub learning_rate: f64,
    /// Environment steps collected per update.
    pub rollout_steps: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
    pub max_grad_norm: f64,
    /// Multiplier applied to costs before they enter the loss.
    pub reward_scale: f64,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.01,
            learning_rate: 1e-4,
            rollout_steps: 4_000,
            epochs: 10,
            minibatch: 250,
            gamma: 0.99,
            gae_lambda: 0.95,
            value_coeff: 0.5,
            entropy_coeff: 0.01,
            max_grad_norm: 0.5,
            reward_scale: 1e-3,
            hidden: vec![100, 100, 100],
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        let bad = |m: &str| Err(RlError::Config(m.into()));
        if !(self.clip > 0.0) || !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("clip and learning rate must be positive");
        }
        if horizon == 0 || self.rollout_steps < horizon || self.rollout_steps % horizon != 0 {
            return Err(RlError::Config(format!(
                "rollout steps {} must be a positive multiple of the horizon {horizon}",
                self.rollout_steps
            )));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.minibatch > self.rollout_steps {
            return bad("epochs and minibatch must be positive, minibatch at most the rollout size");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if self.value_coeff < 0.0 || self.entropy_coeff < 0.0 || !(self.max_grad_norm > 0.0) || !(self.reward_scale > 0.0) {
            return bad("loss coefficients must be non-negative, grad-norm clip and reward scale positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        Ok(())
    }
}

/// Loss coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub clip: f64,
    pub value_coeff: f64,
    pub entropy_coeff: f64,
}

impl From<&PpoConfig> for LossSpec {
    fn from(c: &PpoConfig) -> Self {
        Self { clip: c.clip, value_coeff: c.value_coeff, entropy_coeff: c.entropy_coeff }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub actions: Vec<usize>,
    pub old_logp: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Hex digest of the batch contents.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for x in self.inputs.iter().chain(&self.old_logp).chain(&self.advantages).chain(&self.returns) {
            h.update(x.to_bits().to_le_bytes());
        }
        for a in &self.actions {
            h.update((*a as u64).to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    /// Negative clipped surrogate.
    pub policy: f64,
    /// Mean squared value error.
    pub value: f64,
    pub entropy: f64,
    /// Mean of `old_logp - logp`.
    pub approx_kl: f64,
    /// Fraction of samples whose ratio left the clip band.
    pub clip_fraction: f64,
}

/// Total loss `-surrogate + c_v * value MSE - c_e * entropy` on `batch`.
pub fn ppo_loss(p: &MlpParams, batch: &Batch, spec: LossSpec) -> Result<LossStats> {
    loss_impl(p, batch, spec, false).map(|(s, _)| s)
}

/// Loss and its gradient with respect to every network parameter.
pub fn policy_gradient(p: &MlpParams, batch: &Batch, spec: LossSpec) -> Result<(LossStats, MlpParams)> {
    loss_impl(p, batch, spec, true).map(|(s, g)| (s, g.expect("gradient requested")))
}

fn loss_impl(p: &MlpParams, batch: &Batch, spec: LossSpec, want_grad: bool) -> Result<(LossStats, Option<MlpParams>)> {
    let n = batch.len();
    if n == 0 {
        return Err(RlError::Buffer("empty batch".into()));
    }
    let cache = p.forward_batch(batch.inputs.view())?;
    let a_dim = p.actions;
    let nf = n as f64;
    let mut dlogits = Array2::<f64>::zeros((n, a_dim));
    let mut dvalues = Array1::<f64>::zeros(n);
    let mut stats = LossStats::default();
    let (lo, hi) = (1.0 - spec.clip, 1.0 + spec.clip);
    for i in 0..n {
        let logp = log_softmax(cache.logits.row(i));
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let a = batch.actions[i];
        let adv = batch.advantages[i];
        let log_ratio = logp[a] - batch.old_logp[i];
        let ratio = log_ratio.exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(lo, hi) * adv;
        let surrogate = unclipped.min(clipped);
        let entropy: f64 = -probs.iter().zip(&logp).map(|(q, l)| if *q > 0.0 { q * l } else { 0.0 }).sum::<f64>();
        let err = cache.values[i] - batch.returns[i];
        stats.policy -= surrogate / nf;
        stats.value += err * err / nf;
        stats.entropy += entropy / nf;
        stats.approx_kl -= log_ratio / nf;
        if ratio < lo || ratio > hi {
            stats.clip_fraction += 1.0 / nf;
        }
        if want_grad {
            // d(-surrogate)/d logp[a]; zero when the clipped branch is active
            let d_logp = if unclipped <= clipped { -unclipped / nf } else { 0.0 };
            let mut row = dlogits.row_mut(i);
            for j in 0..a_dim {
                let onehot = if j == a { 1.0 } else { 0.0 };
                // d(-c_e H)/d logit_j = c_e * p_j (log p_j + H)
                let ent = if probs[j] > 0.0 { spec.entropy_coeff * probs[j] * (logp[j] + entropy) / nf } else { 0.0 };
                row[j] = d_logp * (onehot - probs[j]) + ent;
            }
            dvalues[i] = 2.0 * spec.value_coeff * err / nf;
        }
    }
    stats.total = stats.policy + spec.value_coeff * stats.value - spec.entropy_coeff * stats.entropy;
    if !stats.total.is_finite() {
        return Err(RlError::NonFiniteLoss { fingerprint: batch.fingerprint() });
    }
    let grad = want_grad.then(|| p.backward(&cache, dlogits.view(), dvalues.view()));
    Ok((stats, grad))
}

/// First and second moment estimates of the adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, kind: OptimizerKind, lr: f64, params: &mut [f64], grad: &[f64]) {
        match kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - BETA1.powi(self.t as i32);
                let c2 = 1.0 - BETA2.powi(self.t as i32);
                for i in 0..params.len() {
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                    params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Averages over the minibatch steps of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub loss: LossStats,
    /// Mean gradient norm before clipping.
    pub grad_norm: f64,
    pub minibatches: usize,
    /// Mean unnormalized advantage over the buffer.
    pub mean_advantage: f64,
}

/// Gather rows `idx` into a minibatch.
pub fn gather(buffer: &RolloutBuffer, idx: &[usize], advantages: &[f64], returns: &[f64]) -> Batch {
    let width = buffer.records[0].input.len();
    let mut inputs = Array2::zeros((idx.len(), width));
    for (row, &i) in idx.iter().enumerate() {
        for (j, x) in buffer.records[i].input.iter().enumerate() {
            inputs[[row, j]] = *x;
        }
    }
    Batch {
        inputs,
        actions: idx.iter().map(|&i| buffer.records[i].action).collect(),
        old_logp: idx.iter().map(|&i| buffer.records[i].logp).collect(),
        advantages: idx.iter().map(|&i| advantages[i]).collect(),
        returns: idx.iter().map(|&i| returns[i]).collect(),
    }
}

/// `epochs` passes of shuffled minibatch steps over a full buffer, which is
/// cleared afterwards. On a non-finite loss the parameters are left at their
/// last finite state and the error names the offending minibatch.
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut MlpParams,
    opt: &mut OptimizerState,
    buffer: &mut RolloutBuffer,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    if !buffer.is_full() {
        return Err(RlError::Buffer(format!("update needs {} steps, buffer holds {}", buffer.capacity, buffer.len())));
    }
    if opt.m.len() != params.len() {
        return Err(RlError::Dimension("optimizer state does not match the network".into()));
    }
    let gae = compute_gae(buffer, config.gamma, config.gae_lambda)?;
    let mean_advantage = gae.advantages.iter().sum::<f64>() / gae.advantages.len() as f64;
    let mut adv = gae.advantages.clone();
    normalize_advantages(&mut adv);
    let spec = LossSpec::from(config);
    let mut idx: Vec<usize> = (0..buffer.len()).collect();
    let mut stats = UpdateStats { mean_advantage, ..Default::default() };
    let mut sum = LossStats::default();
    for _ in 0..config.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(config.minibatch) {
            let batch = gather(buffer, chunk, &adv, &gae.returns);
            let (loss, mut grad) = policy_gradient(params, &batch, spec)?;
            let norm = grad.norm();
            if !norm.is_finite() {
                return Err(RlError::NonFiniteLoss { fingerprint: batch.fingerprint() });
            }
            if norm > config.max_grad_norm {
                let s = config.max_grad_norm / norm;
                grad.data.iter_mut().for_each(|g| *g *= s);
            }
            opt.step(config.optimizer, config.learning_rate, &mut params.data, &grad.data);
            stats.grad_norm += norm;
            stats.minibatches += 1;
            sum.total += loss.total;
            sum.policy += loss.policy;
            sum.value += loss.value;
            sum.entropy += loss.entropy;
            sum.approx_kl += loss.approx_kl;
            sum.clip_fraction += loss.clip_fraction;
        }
    }
    let k = stats.minibatches as f64;
    stats.grad_norm /= k;
    stats.loss = LossStats {
        total: sum.total / k,
        policy: sum.policy / k,
        value: sum.value / k,
        entropy: sum.entropy / k,
        approx_kl: sum.approx_kl / k,
        clip_fraction: sum.clip_fraction / k,
    };
    buffer.clear();
    Ok(stats)
}
