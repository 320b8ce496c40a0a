//! Convergence diagnostics: rank-normalized split R-hat and effective sample
//! size with FFT autocovariances and Geyer's initial monotone sequence.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::draws::PosteriorDraws;
use crate::error::{InferenceError, Result};

/// Sampler-specific health summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SamplerStats {
    Nuts {
        divergences: usize,
        warmup_divergences: usize,
        mean_accept: f64,
        step_sizes: Vec<f64>,
        max_depth_hits: usize,
        mean_leapfrog: f64,
    },
    RandomWalk {
        acceptance_rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub names: Vec<String>,
    /// Maximum of bulk and tail split R-hat per parameter; `None` with a
    /// single chain.
    pub rhat: Option<Vec<f64>>,
    /// Bulk effective sample size per parameter.
    pub ess: Vec<f64>,
    pub ess_tail: Vec<f64>,
    pub max_rhat: Option<f64>,
    pub min_ess: f64,
    pub sampler: Option<SamplerStats>,
    pub runtime_secs: f64,
}

impl Diagnostics {
    /// Name and value of the parameter with the largest R-hat.
    pub fn worst_rhat(&self) -> Option<(&str, f64)> {
        let rhat = self.rhat.as_ref()?;
        let (i, v) = rhat.iter().enumerate().filter(|(_, v)| !v.is_nan()).max_by(|a, b| a.1.total_cmp(b.1))?;
        Some((self.names[i].as_str(), *v))
    }

    /// Name and value of the parameter with the smallest bulk ESS.
    pub fn worst_ess(&self) -> Option<(&str, f64)> {
        let (i, v) = self.ess.iter().enumerate().filter(|(_, v)| !v.is_nan()).min_by(|a, b| a.1.total_cmp(b.1))?;
        Some((self.names[i].as_str(), *v))
    }
}

/// Diagnostics for every stored parameter. Needs at least four draws per
/// chain.
pub fn diagnostics(draws: &PosteriorDraws) -> Result<Diagnostics> {
    let chains = draws.by_chain();
    let per_chain = chains.iter().map(Vec::len).min().unwrap_or(0);
    if per_chain < 4 {
        return Err(InferenceError::TooFewDraws { needed: 4, got: per_chain });
    }
    let names = draws.header.names.clone();
    let mut rhat = Vec::with_capacity(names.len());
    let mut ess = Vec::with_capacity(names.len());
    let mut ess_tail = Vec::with_capacity(names.len());
    for j in 0..names.len() {
        let x: Vec<Vec<f64>> = chains.iter().map(|c| c.iter().map(|row| row[j]).collect()).collect();
        rhat.push(rank_rhat(&x));
        ess.push(ess_bulk(&x));
        ess_tail.push(ess_tail_of(&x));
    }
    let rhat = (chains.len() > 1).then_some(rhat);
    let max_rhat = rhat.as_ref().map(|r| r.iter().copied().filter(|v| !v.is_nan()).fold(f64::NEG_INFINITY, f64::max));
    let min_ess = ess.iter().copied().filter(|v| !v.is_nan()).fold(f64::INFINITY, f64::min);
    Ok(Diagnostics { names, rhat, ess, ess_tail, max_rhat, min_ess, sampler: None, runtime_secs: 0.0 })
}

/// Halve every chain, dropping the middle draw of odd-length chains.
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of the pooled ranks (average ranks for ties).
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let n = pooled.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| pooled[*a].total_cmp(&pooled[*b]));
    let mut rank = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            rank[order[k]] = r;
        }
        i = j + 1;
    }
    let normal = Normal::standard();
    let mut it = rank.into_iter();
    chains
        .iter()
        .map(|c| c.iter().map(|_| normal.inverse_cdf((it.next().unwrap() - 0.375) / (n as f64 + 0.25))).collect())
        .collect()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Classic potential scale reduction on the given (already split) chains.
pub fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let b_over_n = sample_var(&means);
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains[0][0];
    chains.iter().flatten().all(|v| *v == first)
}

/// Maximum of the bulk and folded rank-normalized split R-hat.
pub fn rank_rhat(chains: &[Vec<f64>]) -> f64 {
    if is_constant(chains) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    let bulk = basic_rhat(&rank_normalize(&split));
    let folded = fold(&split);
    let tail = basic_rhat(&rank_normalize(&folded));
    bulk.max(tail)
}

fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn quantile(x: &[f64], p: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn fold(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let m = median(&pooled);
    chains.iter().map(|c| c.iter().map(|v| (v - m).abs()).collect()).collect()
}

/// Biased autocovariance for lags `0..n` via zero-padded FFT.
pub fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> =
        x.iter().map(|v| Complex::new(v - m, 0.0)).chain(std::iter::repeat(Complex::new(0.0, 0.0))).take(size).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Effective sample size of the given chains (no splitting or ranking).
pub fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 || is_constant(chains) {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c)).collect();
    let chain_mean: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let mean_var = mean(&acov.iter().map(|a| a[0] * nf / (nf - 1.0)).collect::<Vec<_>>());
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&chain_mean);
    }
    let mean_acov = |t: usize| acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
    rho[1] = odd;
    let mut t = 0;
    while t + 5 < n && even + odd > 0.0 {
        t += 2;
        even = 1.0 - (mean_var - mean_acov(t)) / var_plus;
        odd = 1.0 - (mean_var - mean_acov(t + 1)) / var_plus;
        if even + odd >= 0.0 {
            rho[t] = even;
            rho[t + 1] = odd;
        }
    }
    let max_t = t;
    if even > 0.0 {
        rho[max_t] = even;
    }
    // initial monotone sequence
    let mut t = 0;
    while t + 4 <= max_t {
        t += 2;
        if rho[t] + rho[t + 1] > rho[t - 2] + rho[t - 1] {
            rho[t] = (rho[t - 2] + rho[t - 1]) / 2.0;
            rho[t + 1] = rho[t];
        }
    }
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + rho[max_t]).max(1.0 / total.log10());
    total / tau
}

/// Bulk ESS: rank-normalized split chains.
pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    if is_constant(chains) {
        return f64::NAN;
    }
    ess_raw(&rank_normalize(&split_chains(chains)))
}

/// Tail ESS: the smaller ESS of the 5% and 95% quantile indicators.
fn ess_tail_of(chains: &[Vec<f64>]) -> f64 {
    if is_constant(chains) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    let pooled: Vec<f64> = split.iter().flatten().copied().collect();
    let ind = |q: f64| -> Vec<Vec<f64>> {
        split.iter().map(|c| c.iter().map(|v| if *v <= q { 1.0 } else { 0.0 }).collect()).collect()
    };
    let lo = ess_raw(&ind(quantile(&pooled, 0.05)));
    let hi = ess_raw(&ind(quantile(&pooled, 0.95)));
    lo.min(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn autocovariance_matches_direct_sum() {
        let x: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect();
        let m = mean(&x);
        let fast = autocovariance(&x);
        for lag in 0..x.len() {
            let direct: f64 = (0..x.len() - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / x.len() as f64;
            assert!((fast[lag] - direct).abs() < 1e-10, "lag {lag}");
        }
    }

    #[test]
    fn split_drops_middle_of_odd_chains() {
        let s = split_chains(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]]);
        assert_eq!(s, vec![vec![1.0, 2.0], vec![4.0, 5.0]]);
    }

    #[test]
    fn ranks_average_ties() {
        let z = rank_normalize(&[vec![1.0, 1.0], vec![2.0, 0.0]]);
        assert_eq!(z[0][0], z[0][1]);
        assert!(z[1][1] < z[0][0] && z[0][0] < z[1][0]);
        assert!((z[0][0]).abs() < 1e-12);
    }

    #[test]
    fn constant_parameter_is_nan() {
        let c = vec![vec![3.0; 10]; 2];
        assert!(rank_rhat(&c).is_nan());
        assert!(ess_bulk(&c).is_nan());
    }
}
