//! On-policy rollout storage and generalized advantage estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub input: Vec<f64>,
    pub action: usize,
    /// Log-probability of `action` under the collecting policy.
    pub logp: f64,
    /// Training reward (already scaled).
    pub reward: f64,
    pub value: f64,
    /// Last step of its episode.
    pub done: bool,
}

/// Holds exactly `capacity` steps of complete episodes between updates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBuffer {
    pub capacity: usize,
    pub records: Vec<StepRecord>,
}

impl RolloutBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, records: Vec::with_capacity(capacity) }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.records.len() >= self.capacity
    }

    pub fn push(&mut self, r: StepRecord) -> Result<()> {
        if self.is_full() {
            return Err(RlError::Buffer(format!("capacity {} exceeded", self.capacity)));
        }
        self.records.push(r);
        Ok(())
    }

    /// Append one finished episode.
    pub fn push_episode(&mut self, steps: Vec<StepRecord>) -> Result<()> {
        if steps.is_empty() || !steps.last().is_some_and(|s| s.done) || steps[..steps.len() - 1].iter().any(|s| s.done) {
            return Err(RlError::Buffer("episode must end, and only end, at its last step".into()));
        }
        if self.records.len() + steps.len() > self.capacity {
            return Err(RlError::Buffer(format!("capacity {} exceeded", self.capacity)));
        }
        self.records.extend(steps);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    /// The buffer ends on an episode boundary.
    pub fn check_complete(&self) -> Result<()> {
        match self.records.last() {
            Some(r) if r.done => Ok(()),
            Some(_) => Err(RlError::Buffer("last episode is incomplete".into())),
            None => Err(RlError::Buffer("empty".into())),
        }
    }

    /// Lengths of the stored episodes.
    pub fn episode_lengths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut n = 0;
        for r in &self.records {
            n += 1;
            if r.done {
                out.push(n);
                n = 0;
            }
        }
        if n > 0 {
            out.push(n);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gae {
    /// Unnormalized advantages.
    pub advantages: Vec<f64>,
    /// Value targets `advantage + value`.
    pub returns: Vec<f64>,
}

/// `delta_t = r_t + gamma V_{t+1} - V_t`, `A_t = delta_t + gamma lambda A_{t+1}`,
/// with `V` and `A` past the end of an episode taken as zero.
pub fn compute_gae(buffer: &RolloutBuffer, gamma: f64, lambda: f64) -> Result<Gae> {
    buffer.check_complete()?;
    let n = buffer.len();
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for t in (0..n).rev() {
        let r = &buffer.records[t];
        if r.done {
            next_adv = 0.0;
            next_value = 0.0;
        }
        let delta = r.reward + gamma * next_value - r.value;
        next_adv = delta + gamma * lambda * next_adv;
        advantages[t] = next_adv;
        next_value = r.value;
    }
    let returns = advantages.iter().zip(&buffer.records).map(|(a, r)| a + r.value).collect();
    Ok(Gae { advantages, returns })
}

/// Shift and scale to mean 0 and standard deviation 1 (left centered only
/// when the spread vanishes).
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let sd = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a -= mean;
        if sd > 1e-12 {
            *a /= sd;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(reward: f64, value: f64, done: bool) -> StepRecord {
        StepRecord { input: vec![1.0], action: 0, logp: 0.0, reward, value, done }
    }

    #[test]
    fn one_step_td_with_zero_values() {
        let mut b = RolloutBuffer::new(4);
        b.push_episode(vec![rec(0.0, 0.0, false), rec(2.5, 0.0, false), rec(0.0, 0.0, true)]).unwrap();
        let g = compute_gae(&b, 0.9, 0.0).unwrap();
        assert_eq!(g.advantages, vec![0.0, 2.5, 0.0]);
    }

    #[test]
    fn monte_carlo_limit() {
        let mut b = RolloutBuffer::new(8);
        b.push_episode(vec![rec(1.0, 0.0, false), rec(2.0, 0.0, false), rec(3.0, 0.0, true)]).unwrap();
        b.push_episode(vec![rec(5.0, 0.0, false), rec(-1.0, 0.0, true)]).unwrap();
        let g = compute_gae(&b, 1.0, 1.0).unwrap();
        assert_eq!(g.advantages, vec![6.0, 5.0, 3.0, 4.0, -1.0]);
        assert_eq!(g.returns, g.advantages);
    }

    #[test]
    fn normalization_moments() {
        let mut a = vec![1.0, 2.0, 3.0, 10.0];
        normalize_advantages(&mut a);
        let m = a.iter().sum::<f64>() / 4.0;
        let v = a.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-15 && (v - 1.0).abs() < 1e-12);
        let mut c = vec![2.0; 3];
        normalize_advantages(&mut c);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn malformed_episodes_rejected() {
        let mut b = RolloutBuffer::new(3);
        assert!(b.push_episode(vec![rec(0.0, 0.0, false)]).is_err());
        assert!(b.push_episode(vec![rec(0.0, 0.0, true), rec(0.0, 0.0, true)]).is_err());
        b.push_episode(vec![rec(0.0, 0.0, false), rec(0.0, 0.0, true)]).unwrap();
        assert!(b.push_episode(vec![rec(0.0, 0.0, false), rec(0.0, 0.0, true)]).is_err());
        b.push(rec(0.0, 0.0, false)).unwrap();
        assert!(compute_gae(&b, 1.0, 1.0).is_err());
        assert_eq!(b.episode_lengths(), vec![2, 1]);
    }
}
