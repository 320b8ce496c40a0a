//! Multi-chain sampling of the posterior.

use std::time::Instant;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::{condition::ArmijoCondition, BacktrackingLineSearch};
use argmin::solver::quasinewton::LBFGS;

use maint_core::sim::stream_rng;
use maint_core::{PomdpParams, Trajectory};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{diagnostics, Diagnostics, SamplerStats};
use crate::draws::{DrawsHeader, PosteriorDraws};
use crate::error::{InferenceError, Result};
use crate::likelihood::EmissionMode;
use crate::nuts::{run_chain, NutsConfig, Transition};
use crate::posterior::{LogDensity, PosteriorTarget};
use crate::priors::PriorConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Nuts,
    RandomWalk,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Nuts => "nuts",
            SamplerKind::RandomWalk => "random_walk",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub sampler: SamplerKind,
    pub nuts: NutsConfig,
    /// Acceptance rate targeted by the random-walk scale adaptation.
    pub rw_target_accept: f64,
    /// Half-width of the uniform jitter around the prior center.
    pub init_jitter: f64,
    /// Jittered prior-center points screened by the pre-warmup mode search;
    /// 0 starts the chains around the prior center instead.
    pub init_candidates: usize,
    /// L-BFGS iterations spent on each screened candidate.
    pub init_screen_iters: u64,
    /// L-BFGS iterations refining the best candidate.
    pub init_refine_iters: u64,
    /// Largest tolerated fraction of divergent post-warmup transitions.
    pub max_divergence_rate: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            samples: 3000,
            sampler: SamplerKind::Nuts,
            nuts: NutsConfig::default(),
            rw_target_accept: 0.234,
            init_jitter: 0.5,
            init_candidates: 20,
            init_screen_iters: 300,
            init_refine_iters: 2000,
            max_divergence_rate: 0.1,
        }
    }
}

impl McmcConfig {
    /// Four chains of 500 draws after 500 warmup iterations.
    pub fn desk() -> Self {
        Self { warmup: 500, samples: 500, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.samples == 0 {
            return Err(InferenceError::Config("chains and samples must be positive".into()));
        }
        if !(self.nuts.target_accept > 0.0 && self.nuts.target_accept < 1.0)
            || !(self.rw_target_accept > 0.0 && self.rw_target_accept < 1.0)
        {
            return Err(InferenceError::Config("target acceptance rates must lie in (0, 1)".into()));
        }
        if self.nuts.max_depth == 0 || self.init_jitter < 0.0 || !(0.0..=1.0).contains(&self.max_divergence_rate) {
            return Err(InferenceError::Config("invalid tree depth, jitter or divergence limit".into()));
        }
        Ok(())
    }
}

struct ChainResult {
    draws: Vec<Vec<f64>>,
    transitions: Vec<Transition>,
    warmup_divergences: usize,
    step_size: f64,
    rw_acceptance: f64,
}

struct NegLogDensity<'a, T: ?Sized>(&'a T);

impl<T: LogDensity + ?Sized> CostFunction for NegLogDensity<'_, T> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, q: &Vec<f64>) -> std::result::Result<f64, argmin::core::Error> {
        Ok(-self.0.log_density(q))
    }
}

impl<T: LogDensity + ?Sized> Gradient for NegLogDensity<'_, T> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, q: &Vec<f64>) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let mut g = vec![0.0; q.len()];
        self.0.log_density_grad(q, &mut g);
        Ok(g.into_iter().map(|x| -x).collect())
    }
}

/// Climbs from `u` with L-BFGS; returns the best finite point visited.
fn climb<T: LogDensity + ?Sized>(target: &T, u: Vec<f64>, lp: f64, iters: u64) -> (f64, Vec<f64>) {
    if iters == 0 {
        return (lp, u);
    }
    let line_search = BacktrackingLineSearch::new(ArmijoCondition::new(1e-4).expect("valid Armijo constant"));
    let solver = LBFGS::new(line_search, 7);
    match Executor::new(NegLogDensity(target), solver).configure(|s| s.param(u.clone()).max_iters(iters)).run() {
        Ok(r) => {
            let best = -r.state.get_best_cost();
            match r.state.get_best_param() {
                Some(q) if best.is_finite() && best > lp => (best, q.clone()),
                _ => (lp, u),
            }
        }
        Err(_) => (lp, u),
    }
}

fn jittered<R: Rng + ?Sized>(center: &[f64], jitter: f64, rng: &mut R) -> Vec<f64> {
    center.iter().map(|c| c + jitter * (2.0 * rng.random::<f64>() - 1.0)).collect()
}

/// Multi-start L-BFGS from jittered prior-center points: each candidate is
/// screened briefly and the best is refined.
fn mode_search<T: LogDensity + ?Sized>(target: &T, center: &[f64], config: &McmcConfig, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, u64::MAX);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut found = 0;
    for _ in 0..100.max(config.init_candidates) {
        let u = jittered(center, config.init_jitter, &mut rng);
        let lp = target.log_density(&u);
        if lp.is_finite() {
            found += 1;
            let (lp, u) = climb(target, u, lp, config.init_screen_iters);
            if best.as_ref().is_none_or(|(b, _)| lp > *b) {
                best = Some((lp, u));
            }
            if found == config.init_candidates {
                break;
            }
        }
    }
    match best {
        Some((lp, u)) => climb(target, u, lp, config.init_refine_iters).1,
        None => center.to_vec(),
    }
}

/// Draws an initial point with finite density, trying up to 100 jitters.
fn initial_point<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    center: &[f64],
    jitter: f64,
    chain: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    for _ in 0..100 {
        let u = jittered(center, jitter, rng);
        if target.log_density(&u).is_finite() {
            return Ok(u);
        }
    }
    Err(InferenceError::NonFiniteInit { chain })
}

/// Adaptive random-walk Metropolis: the global scale follows a
/// Robbins-Monro recursion toward the target acceptance rate during warmup,
/// and per-coordinate proposal widths are set from the first half of warmup.
fn random_walk_chain<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    init: &[f64],
    warmup: usize,
    samples: usize,
    target_accept: f64,
    rng: &mut R,
) -> ChainResult {
    let dim = init.len();
    let mut q = init.to_vec();
    let mut lp = target.log_density(&q);
    let mut log_scale = (2.38 / (dim as f64).sqrt() * 0.1).ln();
    let mut widths = vec![1.0; dim];
    let mut mean = vec![0.0; dim];
    let mut m2 = vec![0.0; dim];
    let mut count = 0usize;
    let mut accepted = 0usize;
    let mut draws = Vec::with_capacity(samples);
    for iter in 0..warmup + samples {
        let scale = log_scale.exp();
        let proposal: Vec<f64> = q
            .iter()
            .zip(&widths)
            .map(|(x, w)| {
                let n: f64 = rng.sample(StandardNormal);
                x + scale * w * n
            })
            .collect();
        let lp_new = target.log_density(&proposal);
        let log_ratio = lp_new - lp;
        let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
        if rng.random::<f64>() < accept_prob {
            q = proposal;
            lp = lp_new;
            if iter >= warmup {
                accepted += 1;
            }
        }
        if iter < warmup {
            log_scale += (accept_prob - target_accept) / ((iter + 1) as f64).powf(0.6);
            if iter < warmup / 2 {
                count += 1;
                for i in 0..dim {
                    let d = q[i] - mean[i];
                    mean[i] += d / count as f64;
                    m2[i] += d * (q[i] - mean[i]);
                }
            }
            if iter + 1 == warmup / 2 && count > 2 {
                widths = m2.iter().map(|m| (m / (count - 1) as f64).sqrt().max(1e-4)).collect();
                log_scale = (2.38 / (dim as f64).sqrt()).ln();
            }
        } else {
            draws.push(q.clone());
        }
    }
    ChainResult {
        draws,
        transitions: Vec::new(),
        warmup_divergences: 0,
        step_size: log_scale.exp(),
        rw_acceptance: accepted as f64 / samples as f64,
    }
}

/// Sample the posterior of `data` under `priors`. Chains start from jittered
/// points around a posterior mode found by [`McmcConfig::init_candidates`]
/// L-BFGS runs; chain `c` draws from the random stream `(seed, c)` and chains
/// run in parallel.
pub fn run_mcmc(
    data: &[Trajectory],
    priors: &PriorConfig,
    mode: EmissionMode,
    config: &McmcConfig,
    seed: u64,
) -> Result<(PosteriorDraws, Diagnostics)> {
    config.validate()?;
    if data.is_empty() {
        return Err(InferenceError::EmptyDataset);
    }
    let target = PosteriorTarget::new(data.to_vec(), priors.clone(), mode)?;
    run_mcmc_target(&target, config, seed)
}

pub fn run_mcmc_target(target: &PosteriorTarget, config: &McmcConfig, seed: u64) -> Result<(PosteriorDraws, Diagnostics)> {
    config.validate()?;
    let start = Instant::now();
    let mut center = target.prior_center();
    if config.init_candidates > 0 {
        center = mode_search(target, &center, config, seed);
    }
    let results: Vec<Result<ChainResult>> = (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let init = initial_point(target, &center, config.init_jitter, c, &mut rng)?;
            match config.sampler {
                SamplerKind::Nuts => {
                    let run = run_chain(target, &init, config.warmup, config.samples, config.nuts, &mut rng)
                        .ok_or(InferenceError::NonFiniteInit { chain: c })?;
                    Ok(ChainResult {
                        draws: run.draws,
                        transitions: run.transitions,
                        warmup_divergences: run.warmup_divergences,
                        step_size: run.step_size,
                        rw_acceptance: f64::NAN,
                    })
                }
                SamplerKind::RandomWalk => Ok(random_walk_chain(
                    target,
                    &init,
                    config.warmup,
                    config.samples,
                    config.rw_target_accept,
                    &mut rng,
                )),
            }
        })
        .collect();
    let results: Vec<ChainResult> = results.into_iter().collect::<Result<_>>()?;

    let stats = match config.sampler {
        SamplerKind::Nuts => {
            let all: Vec<&Transition> = results.iter().flat_map(|r| &r.transitions).collect();
            let divergences = all.iter().filter(|t| t.divergent).count();
            let total = all.len();
            let rate = divergences as f64 / total as f64;
            if rate > config.max_divergence_rate {
                return Err(InferenceError::TooManyDivergences { divergent: divergences, total, rate: 100.0 * rate });
            }
            SamplerStats::Nuts {
                divergences,
                warmup_divergences: results.iter().map(|r| r.warmup_divergences).sum(),
                mean_accept: all.iter().map(|t| t.accept_stat).sum::<f64>() / total as f64,
                step_sizes: results.iter().map(|r| r.step_size).collect(),
                max_depth_hits: all.iter().filter(|t| t.depth >= config.nuts.max_depth).count(),
                mean_leapfrog: all.iter().map(|t| t.n_leapfrog as f64).sum::<f64>() / total as f64,
            }
        }
        SamplerKind::RandomWalk => SamplerStats::RandomWalk {
            acceptance_rate: results.iter().map(|r| r.rw_acceptance).sum::<f64>() / results.len() as f64,
        },
    };

    let chains: Vec<Vec<PomdpParams>> = results
        .iter()
        .map(|r| r.draws.iter().map(|u| target.layout.decode(u).map(|d| d.params)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let header = DrawsHeader::new(
        target.dims(),
        config.chains,
        config.warmup,
        config.samples,
        seed,
        config.sampler.name(),
        target.priors.fingerprint(),
    );
    let draws = PosteriorDraws::from_chains(header, &chains);
    let mut diag = if config.samples >= 4 {
        diagnostics(&draws)?
    } else {
        Diagnostics {
            names: draws.header.names.clone(),
            rhat: None,
            ess: Vec::new(),
            ess_tail: Vec::new(),
            max_rhat: None,
            min_ess: f64::NAN,
            sampler: None,
            runtime_secs: 0.0,
        }
    };
    diag.sampler = Some(stats);
    diag.runtime_secs = start.elapsed().as_secs_f64();
    Ok((draws, diag))
}
