//! Reference computations for the test suites.
//!
//! Everything here is written from the model definition alone, by a
//! different route than the production code (brute-force enumeration,
//! numerical quadrature, `statrs` densities), so agreement between the two is
//! meaningful.

use maint_core::sim::RandomPolicy;
use maint_core::{
    simulate_episode, ActionIndex, CostTable, ObservationModel, PomdpParams, SimRng, StudentParams, Trajectory, TransitionModel,
};
use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, StudentsT};

pub mod quad {
    /// Adaptive Simpson on `[a, b]` with absolute tolerance `tol`.
    pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 50)
    }

    /// Integral of `f` over `(-inf, ub]` through `x = ub - t / (1 - t)`.
    pub fn integrate_below(f: &dyn Fn(f64) -> f64, ub: f64, tol: f64) -> f64 {
        let g = |t: f64| {
            if t >= 1.0 {
                return 0.0;
            }
            let x = ub - t / (1.0 - t);
            f(x) / ((1.0 - t) * (1.0 - t))
        };
        simpson(&g, 0.0, 0.5, tol) + simpson(&g, 0.5, 0.9, tol) + simpson(&g, 0.9, 1.0, tol)
    }

    /// Integral of a unimodal `f` with its peak at `mode` over `(-inf, ub]`,
    /// split at `min(mode, ub)` so a narrow peak far below `ub` is not missed.
    pub fn integrate_below_peaked(f: &dyn Fn(f64) -> f64, mode: f64, ub: f64, tol: f64) -> f64 {
        let c = mode.min(ub);
        let upper = if c < ub { simpson(f, c, ub, tol / 2.0) } else { 0.0 };
        integrate_below(f, c, tol / 2.0) + upper
    }

    const GL_NODES: [f64; 5] = [0.0, -0.538_469_310_105_683, 0.538_469_310_105_683, -0.906_179_845_938_664, 0.906_179_845_938_664];
    const GL_WEIGHTS: [f64; 5] = [0.568_888_888_888_889, 0.478_628_670_499_366, 0.478_628_670_499_366, 0.236_926_885_056_189, 0.236_926_885_056_189];

    /// Five-point Gauss-Legendre rule on `[a, b]`.
    pub fn gauss_legendre(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        h * GL_NODES.iter().zip(&GL_WEIGHTS).map(|(t, w)| w * f(c + h * t)).sum::<f64>()
    }
}

/// Kolmogorov-Smirnov distance between `samples` and the truncated Student-t
/// law, with the CDF obtained by integrating the unnormalized kernel between
/// consecutive sorted samples (accumulated from the bound downward).
pub fn ks_truncated_t(samples: &mut [f64], loc: f64, scale: f64, dof: f64, ub: f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len();
    let kernel = |x: f64| {
        let w = (x - loc) / scale;
        (1.0 + w * w / dof).powf(-(dof + 1.0) / 2.0)
    };
    let mass = quad::integrate_below_peaked(&kernel, loc, ub, 1e-13);
    let mut above = quad::simpson(&kernel, samples[n - 1], ub, 1e-14);
    let mut d: f64 = 0.0;
    for i in (0..n).rev() {
        if i < n - 1 {
            above += quad::gauss_legendre(&kernel, samples[i], samples[i + 1]);
        }
        let cdf = 1.0 - above / mass;
        d = d.max(((i + 1) as f64 / n as f64 - cdf).abs()).max((cdf - i as f64 / n as f64).abs());
    }
    d
}

/// Truncated Student-t log density from `statrs`.
pub fn statrs_ln_truncated_t(x: f64, loc: f64, scale: f64, dof: f64, ub: f64) -> f64 {
    if x > ub {
        return f64::NEG_INFINITY;
    }
    let t = StudentsT::new(loc, scale, dof).expect("valid Student-t");
    t.ln_pdf(x) - t.cdf(ub).ln()
}

/// `ln p(z_next | s_next, a_prev, z_prev)`, or the first-step density when
/// `prev` is `None`, written directly from the observation equations.
pub fn reference_ln_emission(obs: &ObservationModel, s: usize, prev: Option<(usize, f64)>, z: f64) -> f64 {
    match prev {
        None => {
            let p = obs.initial[s];
            statrs_ln_truncated_t(z, p.loc, p.scale, p.dof, 0.0)
        }
        Some((0, zp)) => {
            let p = obs.deterioration[s];
            statrs_ln_truncated_t(z - zp, p.loc, p.scale, p.dof, -zp)
        }
        Some((a, zp)) => {
            let p = obs.repair[s];
            statrs_ln_truncated_t(z, obs.ar_coeff[a - 1] * zp + p.loc, p.scale, p.dof, 0.0)
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Marginal log-likelihood of a trajectory by summing over every hidden path.
pub fn path_enumeration_loglik(theta: &PomdpParams, traj: &Trajectory) -> f64 {
    let s_count = theta.dims().states;
    let len = traj.observations.len();
    let total = s_count.pow(len as u32);
    let mut terms = Vec::with_capacity(total);
    let mut path = vec![0usize; len];
    for code in 0..total {
        let mut c = code;
        for p in path.iter_mut() {
            *p = c % s_count;
            c /= s_count;
        }
        let z = &traj.observations;
        let mut lp = theta.transition.initial[path[0]].ln() + reference_ln_emission(&theta.observation, path[0], None, z[0]);
        for t in 0..len - 1 {
            let a = traj.actions[t].0;
            lp += theta.transition.kernel[a][path[t]][path[t + 1]].ln();
            lp += reference_ln_emission(&theta.observation, path[t + 1], Some((a, z[t])), z[t + 1]);
        }
        terms.push(lp);
    }
    log_sum_exp(&terms)
}

/// Optimal expected total reward by maximizing over every deterministic
/// history-dependent policy tree, for each start state and forced first action.
///
/// Returns `v[s][a]`: the best value from `s` with `H` decisions remaining
/// when the first action is `a`.
pub fn policy_tree_values(theta: &PomdpParams, costs: &CostTable, horizon: usize) -> Vec<Vec<f64>> {
    let dims = theta.dims();
    let (s_count, a_count) = (dims.states, dims.actions);
    // node ids for state histories of length 1..=H
    let mut offset = 0;
    let mut level_offset = Vec::with_capacity(horizon);
    for l in 1..=horizon {
        level_offset.push(offset);
        offset += s_count.pow(l as u32);
    }
    let nodes = offset;
    let n_policies = (a_count as u128).pow(nodes as u32);
    assert!(n_policies <= 1 << 22, "instance too large for exhaustive enumeration");

    fn eval(
        theta: &PomdpParams,
        costs: &CostTable,
        policy: &[usize],
        level_offset: &[usize],
        hist_code: usize,
        depth: usize,
        s: usize,
    ) -> f64 {
        if depth == level_offset.len() {
            return 0.0;
        }
        let a = policy[level_offset[depth] + hist_code];
        let r = costs.action_cost[a][s] + costs.condition_cost[s];
        let s_count = theta.dims().states;
        let mut cont = 0.0;
        for (next, p) in theta.transition.kernel[a][s].iter().enumerate() {
            if *p > 0.0 {
                cont += p * eval(theta, costs, policy, level_offset, hist_code * s_count + next, depth + 1, next);
            }
        }
        r + cont
    }

    let mut best = vec![vec![f64::NEG_INFINITY; a_count]; s_count];
    let mut policy = vec![0usize; nodes];
    for code in 0..n_policies {
        let mut c = code;
        for p in policy.iter_mut() {
            *p = (c % a_count as u128) as usize;
            c /= a_count as u128;
        }
        for (s, row) in best.iter_mut().enumerate() {
            let v = eval(theta, costs, &policy, &level_offset, s, 0, s);
            let a0 = policy[s];
            if v > row[a0] {
                row[a0] = v;
            }
        }
    }
    best
}

/// Probability vector from normalized exponential draws, floored so every
/// entry stays strictly positive.
pub fn random_simplex<G: Rng + ?Sized>(rng: &mut G, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln() + 0.02).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// A random valid parameter set with `states` states and `actions` actions.
pub fn random_params<G: Rng + ?Sized>(rng: &mut G, states: usize, actions: usize) -> PomdpParams {
    let mut student = |loc_lo: f64, loc_hi: f64| {
        StudentParams::new(rng.random_range(loc_lo..loc_hi), rng.random_range(0.3..2.0), rng.random_range(3.0..20.0))
    };
    let initial: Vec<_> = (0..states).map(|s| student(-2.5 - 3.0 * s as f64, -1.5 - 3.0 * s as f64)).collect();
    let deterioration: Vec<_> = (0..states).map(|_| student(-1.5, 0.0)).collect();
    let repair: Vec<_> = (0..states).map(|_| student(-8.0, -0.5)).collect();
    let kernel = (0..actions).map(|_| (0..states).map(|_| random_simplex(rng, states)).collect()).collect();
    PomdpParams {
        transition: TransitionModel { initial: random_simplex(rng, states), kernel },
        observation: ObservationModel {
            initial,
            deterioration,
            repair,
            ar_coeff: (1..actions).map(|_| rng.random_range(0.0..0.8)).collect(),
        },
    }
}

/// A random non-positive cost table with a free do-nothing action.
pub fn random_costs<G: Rng + ?Sized>(rng: &mut G, states: usize, actions: usize) -> CostTable {
    let action_cost = (0..actions)
        .map(|a| (0..states).map(|_| if a == 0 { 0.0 } else { -rng.random_range(0.0..10.0) }).collect())
        .collect();
    CostTable { action_cost, condition_cost: (0..states).map(|_| -rng.random_range(0.0..10.0)).collect() }
}

/// Central finite difference of `f` along coordinate `i`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Uniformly random actions of a scripted episode, for building trajectories.
pub fn random_actions<G: Rng + ?Sized>(rng: &mut G, actions: usize, steps: usize) -> Vec<ActionIndex> {
    (0..steps).map(|_| ActionIndex(rng.random_range(0..actions))).collect()
}

/// Trajectory of `steps` uniformly random actions simulated from `theta`
/// (hidden states recorded).
pub fn random_trajectory(rng: &mut SimRng, theta: &PomdpParams, steps: usize) -> Trajectory {
    let dims = theta.dims();
    let zero = CostTable { action_cost: vec![vec![0.0; dims.states]; dims.actions], condition_cost: vec![0.0; dims.states] };
    simulate_episode(theta, &RandomPolicy { actions: dims.actions }, &zero, steps, rng).expect("simulation succeeds").trajectory
}
