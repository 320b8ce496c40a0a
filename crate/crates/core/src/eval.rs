//! Monte Carlo policy evaluation over independent episodes.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::{CostTable, PomdpParams};
use crate::sim::{simulate_episode_with, stream_rng, EpisodeOptions, Policy};

/// Source of the environment parameters for each evaluation episode.
#[derive(Debug, Clone, Copy)]
pub enum ParamSource<'a> {
    /// Every episode runs in the same model.
    Fixed(&'a PomdpParams),
    /// Each episode runs in a model drawn uniformly from the set.
    Draws(&'a [PomdpParams]),
}

impl<'a> ParamSource<'a> {
    pub fn validate(&self) -> Result<()> {
        match self {
            ParamSource::Fixed(p) => p.validate(),
            ParamSource::Draws(d) => {
                let first = d.first().ok_or_else(|| ModelError::InvalidArgument("empty parameter draw set".into()))?;
                if d.iter().any(|p| p.dims() != first.dims()) {
                    return Err(ModelError::Dimension("parameter draws disagree on S or A".into()));
                }
                Ok(())
            }
        }
    }

    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G) -> &'a PomdpParams {
        match self {
            ParamSource::Fixed(p) => p,
            ParamSource::Draws(d) => &d[rng.random_range(0..d.len())],
        }
    }
}

/// Summary of undiscounted episode totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; zero for a single episode.
    pub se: f64,
    pub max: f64,
    pub min: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub totals: Option<Vec<f64>>,
}

impl EvalStats {
    /// Statistics of `totals`, reduced in index order.
    pub fn from_totals(totals: &[f64]) -> Result<Self> {
        let n = totals.len();
        if n == 0 {
            return Err(ModelError::InvalidArgument("no episode totals".into()));
        }
        let mean = totals.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let ss: f64 = totals.iter().map(|x| (x - mean) * (x - mean)).sum();
            (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        let max = totals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = totals.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { mean, se, max, min, n, totals: None })
    }

    /// `sqrt(se_a² + se_b²)`.
    pub fn combined_se(&self, other: &EvalStats) -> f64 {
        self.se.hypot(other.se)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub episode: EpisodeOptions,
    pub keep_totals: bool,
}

/// Seed of the parameter-selection streams belonging to simulation seed `seed`.
pub fn param_seed(seed: u64) -> u64 {
    seed ^ 0x5DEE_CE66_D1CE_4E5B
}

/// Evaluate `policy` over `n_episodes` episodes of `horizon` steps.
///
/// Episode `i` simulates with rng stream `seed + i` and picks its parameters
/// with stream `i` of [`param_seed`]`(seed)`, so results do not depend on
/// thread scheduling and a draw set of identical models reproduces the fixed
/// source exactly.
pub fn evaluate_policy<P: Policy + ?Sized>(
    policy: &P,
    source: ParamSource<'_>,
    costs: &CostTable,
    horizon: usize,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalStats> {
    evaluate_policy_with(policy, source, costs, horizon, n_episodes, seed, EvalOptions::default())
}

pub fn evaluate_policy_with<P: Policy + ?Sized>(
    policy: &P,
    source: ParamSource<'_>,
    costs: &CostTable,
    horizon: usize,
    n_episodes: usize,
    seed: u64,
    options: EvalOptions,
) -> Result<EvalStats> {
    if n_episodes < 1 {
        return Err(ModelError::InvalidArgument("need at least one evaluation episode".into()));
    }
    source.validate()?;
    let totals = (0..n_episodes)
        .into_par_iter()
        .map(|i| {
            let theta = source.sample(&mut stream_rng(param_seed(seed), i as u64));
            let mut rng = stream_rng(seed, i as u64);
            simulate_episode_with(theta, policy, costs, horizon, options.episode, &mut rng).map(|r| r.total_cost)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut stats = EvalStats::from_totals(&totals)?;
    if options.keep_totals {
        stats.totals = Some(totals);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::theta_true;
    use crate::model::ActionIndex;
    use crate::sim::{ConstantPolicy, RandomPolicy};
    use crate::tdist::StudentParams;
    use crate::model::{ObservationModel, TransitionModel};

    fn single_state() -> (PomdpParams, CostTable) {
        let e = StudentParams::new(-1.0, 0.5, 5.0);
        let theta = PomdpParams {
            transition: TransitionModel { initial: vec![1.0], kernel: vec![vec![vec![1.0]]] },
            observation: ObservationModel { initial: vec![e], deterioration: vec![e], repair: vec![e], ar_coeff: vec![] },
        };
        let costs = CostTable { action_cost: vec![vec![0.0]], condition_cost: vec![-100.0] };
        (theta, costs)
    }

    #[test]
    fn deterministic_environment() {
        let (theta, costs) = single_state();
        let stats = evaluate_policy(&ConstantPolicy(ActionIndex(0)), ParamSource::Fixed(&theta), &costs, 50, 64, 3).unwrap();
        assert_eq!(stats.mean, -5_000.0);
        assert_eq!(stats.se, 0.0);
        assert_eq!((stats.min, stats.max), (-5_000.0, -5_000.0));
    }

    #[test]
    fn single_episode() {
        let theta = theta_true();
        let policy = RandomPolicy { actions: 3 };
        let stats = evaluate_policy(&policy, ParamSource::Fixed(&theta), &CostTable::railway(), 50, 1, 11).unwrap();
        assert_eq!(stats.se, 0.0);
        assert_eq!(stats.mean, stats.max);
        assert_eq!(stats.mean, stats.min);
    }

    #[test]
    fn reproducible_and_ordered() {
        let theta = theta_true();
        let policy = RandomPolicy { actions: 3 };
        let opts = EvalOptions { keep_totals: true, ..Default::default() };
        let run = || {
            evaluate_policy_with(&policy, ParamSource::Fixed(&theta), &CostTable::railway(), 50, 200, 5, opts).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert!(a.min <= a.mean && a.mean <= a.max);
        assert_eq!(a.totals.as_ref().unwrap().len(), 200);
    }

    #[test]
    fn identical_draws_match_fixed_source() {
        let theta = theta_true();
        let draws = vec![theta.clone(); 3];
        let policy = RandomPolicy { actions: 3 };
        let costs = CostTable::railway();
        let a = evaluate_policy(&policy, ParamSource::Fixed(&theta), &costs, 50, 100, 9).unwrap();
        let b = evaluate_policy(&policy, ParamSource::Draws(&draws), &costs, 50, 100, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn se_uses_unbiased_variance() {
        let s = EvalStats::from_totals(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let var: f64 = (2.25 + 0.25 + 0.25 + 2.25) / 3.0;
        assert!((s.se - (var / 4.0).sqrt()).abs() < 1e-15);
        assert!(EvalStats::from_totals(&[]).is_err());
    }

    #[test]
    fn rejects_zero_episodes_and_empty_draws() {
        let theta = theta_true();
        let costs = CostTable::railway();
        let p = ConstantPolicy(ActionIndex(0));
        assert!(evaluate_policy(&p, ParamSource::Fixed(&theta), &costs, 50, 0, 1).is_err());
        assert!(evaluate_policy(&p, ParamSource::Draws(&[]), &costs, 50, 10, 1).is_err());
    }
}
