//! Marginal likelihood of trajectories with the hidden states summed out.
//!
//! The recursion is the scaled forward algorithm: emission densities are
//! exponentiated after subtracting their per-step maximum, and the predicted
//! state distribution is renormalized at every step, so the log-likelihood is
//! the sum of the per-step log normalizers. The gradient comes from the
//! matching backward pass (state and pair posteriors), with emission partials
//! obtained by forward-mode differentiation of the truncated-t density.

use maint_core::dual::Dual;
use maint_core::tdist::{ln_t_cdf_with, ln_t_norm, ln_t_pdf_with, ln_truncated_t};
use maint_core::{PomdpParams, StateIndex, Trajectory};
use serde::{Deserialize, Serialize};

use crate::error::{InferenceError, Result};
use crate::transform::NaturalGrad;

/// Which parts of the generative model enter the likelihood.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionMode {
    /// Hidden states marginalized, observations scored.
    #[default]
    Full,
    /// Observations ignored; the recorded hidden states are treated as data.
    /// Only the transition model is then informed by the data.
    Disabled,
}

#[derive(Debug, Clone, Copy)]
enum Regime {
    Initial,
    Deterioration { z_prev: f64 },
    Repair { action: usize, z_prev: f64 },
}

fn regime(traj: &Trajectory, t: usize) -> Regime {
    if t == 0 {
        Regime::Initial
    } else {
        let z_prev = traj.observations[t - 1];
        match traj.actions[t - 1].0 {
            0 => Regime::Deterioration { z_prev },
            a => Regime::Repair { action: a, z_prev },
        }
    }
}

fn ln_emission(theta: &PomdpParams, traj: &Trajectory, t: usize, s: usize) -> f64 {
    let z = traj.observations[t];
    let obs = &theta.observation;
    match regime(traj, t) {
        Regime::Initial => {
            let p = obs.initial[s];
            ln_truncated_t(z, p.loc, p.scale, p.dof, 0.0)
        }
        Regime::Deterioration { z_prev } => {
            let p = obs.deterioration[s];
            ln_truncated_t(z - z_prev, p.loc, p.scale, p.dof, -z_prev)
        }
        Regime::Repair { action, z_prev } => {
            let p = obs.repair[s];
            ln_truncated_t(z, obs.ar_coeff[action - 1] * z_prev + p.loc, p.scale, p.dof, 0.0)
        }
    }
}

/// Log-gamma terms of the three regimes' t densities (value and dof
/// derivative) and the initial regime's truncation terms, computed once per
/// parameter set.
struct NormCache {
    groups: [Vec<Dual<1>>; 3],
    initial_cdf: Vec<CdfTerm>,
}

impl NormCache {
    fn new(theta: &PomdpParams) -> Self {
        let obs = &theta.observation;
        let norms = |g: &[maint_core::StudentParams]| g.iter().map(|p| ln_t_norm(Dual::<1>::var(p.dof, 0))).collect::<Vec<_>>();
        let groups = [norms(&obs.initial), norms(&obs.deterioration), norms(&obs.repair)];
        let initial_cdf = obs.initial.iter().zip(&groups[0]).map(|(p, n)| cdf_term(0.0, p.loc, p.scale, p.dof, *n)).collect();
        Self { groups, initial_cdf }
    }
}

/// `ln F((ub - loc) / scale)` with the pieces its partials need.
#[derive(Debug, Clone, Copy)]
struct CdfTerm {
    ln_cdf: f64,
    /// `f(w) / F(w)` at the standardized bound `w`.
    ratio: f64,
    w: f64,
    d_dof: f64,
}

fn cdf_term(ub: f64, loc: f64, scale: f64, dof: f64, norm: Dual<1>) -> CdfTerm {
    let w = (ub - loc) / scale;
    let ln_cdf = ln_t_cdf_with(Dual::<1>::constant(w), Dual::var(dof, 0), norm);
    let ratio = (ln_t_pdf_with(w, dof, norm.re) - ln_cdf.re).exp();
    CdfTerm { ln_cdf: ln_cdf.re, ratio, w, d_dof: ln_cdf.eps[0] }
}

/// `ln TS(x; loc, scale, dof, ub)` with analytic loc and scale partials; only
/// the dof direction of the CDF goes through forward-mode differentiation.
fn truncated_t_grad(x: f64, loc: f64, scale: f64, dof: f64, ub: f64, norm: Dual<1>, cdf: Option<&CdfTerm>) -> (f64, [f64; 3]) {
    if x > ub {
        return (f64::NEG_INFINITY, [0.0; 3]);
    }
    let z = (x - loc) / scale;
    let z2 = z * z;
    let q = dof + z2;
    let l1p = (z2 / dof).ln_1p();
    let mut value = norm.re - 0.5 * dof.ln() - 0.5 * (dof + 1.0) * l1p - scale.ln();
    let mut d_loc = (dof + 1.0) * z / (scale * q);
    let mut d_scale = -1.0 / scale + (dof + 1.0) * z2 / (scale * q);
    let mut d_dof = norm.eps[0] - 0.5 / dof - 0.5 * l1p + 0.5 * (dof + 1.0) * z2 / (dof * q);
    if ub.is_finite() {
        let computed;
        let c = match cdf {
            Some(c) => c,
            None => {
                computed = cdf_term(ub, loc, scale, dof, norm);
                &computed
            }
        };
        value -= c.ln_cdf;
        d_loc += c.ratio / scale;
        d_scale += c.ratio * c.w / scale;
        d_dof -= c.d_dof;
    }
    (value, [d_loc, d_scale, d_dof])
}

/// Log density and its `[loc, scale, dof]` partials (loc is the effective
/// location of the regime).
fn ln_emission_grad(theta: &PomdpParams, traj: &Trajectory, t: usize, s: usize, cache: &NormCache) -> (f64, [f64; 3]) {
    let z = traj.observations[t];
    let obs = &theta.observation;
    match regime(traj, t) {
        Regime::Initial => {
            let p = obs.initial[s];
            truncated_t_grad(z, p.loc, p.scale, p.dof, 0.0, cache.groups[0][s], Some(&cache.initial_cdf[s]))
        }
        Regime::Deterioration { z_prev } => {
            let p = obs.deterioration[s];
            truncated_t_grad(z - z_prev, p.loc, p.scale, p.dof, -z_prev, cache.groups[1][s], None)
        }
        Regime::Repair { action, z_prev } => {
            let p = obs.repair[s];
            truncated_t_grad(z, obs.ar_coeff[action - 1] * z_prev + p.loc, p.scale, p.dof, 0.0, cache.groups[2][s], None)
        }
    }
}

fn check(theta: &PomdpParams, traj: &Trajectory) -> Result<()> {
    traj.validate(theta.dims())?;
    Ok(())
}

/// Scaled forward pass over per-step log emissions (`log_emit[t * S + s]`).
/// Writes the filtered state distributions into `alphas` and returns the
/// log-likelihood, the sum of the per-step log normalizers.
fn forward(theta: &PomdpParams, traj: &Trajectory, log_emit: &[f64], alphas: &mut Vec<f64>) -> Result<f64> {
    let s_count = theta.dims().states;
    let len = log_emit.len() / s_count;
    alphas.clear();
    alphas.resize(len * s_count, 0.0);
    let mut prior = vec![0.0; s_count];
    prior.copy_from_slice(&theta.transition.initial);
    let mut total = 0.0;
    for t in 0..len {
        if t > 0 {
            let kernel = &theta.transition.kernel[traj.actions[t - 1].0];
            prior.iter_mut().for_each(|p| *p = 0.0);
            for (s, ps) in alphas[(t - 1) * s_count..t * s_count].iter().enumerate() {
                if *ps != 0.0 {
                    for (n, k) in kernel[s].iter().enumerate() {
                        prior[n] += ps * k;
                    }
                }
            }
        }
        let e = &log_emit[t * s_count..(t + 1) * s_count];
        let max = (0..s_count).filter(|s| prior[*s] > 0.0).map(|s| e[s]).fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(InferenceError::Degenerate {
                trajectory: 0,
                step: t,
                reason: format!("no reachable state has positive emission density (max log density {max})"),
            });
        }
        let alpha = &mut alphas[t * s_count..(t + 1) * s_count];
        let mut c = 0.0;
        for s in 0..s_count {
            alpha[s] = prior[s] * (e[s] - max).exp();
            c += alpha[s];
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(InferenceError::Degenerate { trajectory: 0, step: t, reason: format!("normalizer {c}") });
        }
        alpha.iter_mut().for_each(|a| *a /= c);
        total += max + c.ln();
    }
    Ok(total)
}

fn log_emissions(theta: &PomdpParams, traj: &Trajectory) -> Vec<f64> {
    let s_count = theta.dims().states;
    (0..traj.observations.len()).flat_map(|t| (0..s_count).map(move |s| ln_emission(theta, traj, t, s))).collect()
}

/// `ln p(z_0..z_T | a_0..a_{T-1}, theta)`, or with [`EmissionMode::Disabled`]
/// `ln p(s_0..s_T | a, theta)`.
pub fn trajectory_loglik(theta: &PomdpParams, traj: &Trajectory, mode: EmissionMode) -> Result<f64> {
    check(theta, traj)?;
    match mode {
        EmissionMode::Full => forward(theta, traj, &log_emissions(theta, traj), &mut Vec::new()),
        EmissionMode::Disabled => states_loglik(theta, traj, None),
    }
}

/// Forward-algorithm log-likelihood; see [`trajectory_loglik`].
pub fn forward_loglik(theta: &PomdpParams, traj: &Trajectory) -> Result<f64> {
    trajectory_loglik(theta, traj, EmissionMode::Full)
}

/// Total log-likelihood over a dataset; degeneracies report the trajectory index.
pub fn dataset_loglik(theta: &PomdpParams, data: &[Trajectory], mode: EmissionMode) -> Result<f64> {
    let mut total = 0.0;
    for (i, traj) in data.iter().enumerate() {
        total += trajectory_loglik(theta, traj, mode).map_err(|e| with_trajectory(e, i))?;
    }
    Ok(total)
}

fn with_trajectory(e: InferenceError, index: usize) -> InferenceError {
    match e {
        InferenceError::Degenerate { step, reason, .. } => InferenceError::Degenerate { trajectory: index, step, reason },
        other => other,
    }
}

fn states_loglik(theta: &PomdpParams, traj: &Trajectory, grad: Option<&mut NaturalGrad>) -> Result<f64> {
    let states = traj
        .hidden_states
        .as_ref()
        .ok_or_else(|| InferenceError::Incompatible("emission-free likelihood needs recorded hidden states".into()))?;
    let StateIndex(s0) = states[0];
    let mut lp = theta.transition.initial[s0].ln();
    let mut counts = Vec::with_capacity(states.len());
    for t in 0..traj.actions.len() {
        let (a, s, n) = (traj.actions[t].0, states[t].0, states[t + 1].0);
        lp += theta.transition.kernel[a][s][n].ln();
        counts.push((a, s, n));
    }
    if !lp.is_finite() {
        return Err(InferenceError::Degenerate { trajectory: 0, step: 0, reason: "impossible state sequence".into() });
    }
    if let Some(g) = grad {
        g.ln_initial[s0] += 1.0;
        for (a, s, n) in counts {
            g.ln_kernel[a][s][n] += 1.0;
        }
    }
    Ok(lp)
}

/// Buffers reused across the trajectories of one gradient evaluation.
#[derive(Default)]
struct Scratch {
    log_emit: Vec<f64>,
    partials: Vec<[f64; 3]>,
    alphas: Vec<f64>,
}

/// Log-likelihood of one trajectory, adding its natural-coordinate gradient
/// into `grad`.
pub fn trajectory_loglik_grad(theta: &PomdpParams, traj: &Trajectory, mode: EmissionMode, grad: &mut NaturalGrad) -> Result<f64> {
    loglik_grad_cached(theta, traj, mode, grad, &NormCache::new(theta), &mut Scratch::default())
}

fn loglik_grad_cached(
    theta: &PomdpParams,
    traj: &Trajectory,
    mode: EmissionMode,
    grad: &mut NaturalGrad,
    cache: &NormCache,
    scratch: &mut Scratch,
) -> Result<f64> {
    check(theta, traj)?;
    if mode == EmissionMode::Disabled {
        return states_loglik(theta, traj, Some(grad));
    }
    let s_count = theta.dims().states;
    let len = traj.observations.len();
    scratch.log_emit.clear();
    scratch.partials.clear();
    for t in 0..len {
        for s in 0..s_count {
            let (v, d) = ln_emission_grad(theta, traj, t, s, cache);
            scratch.log_emit.push(v);
            scratch.partials.push(d);
        }
    }
    let total = forward(theta, traj, &scratch.log_emit, &mut scratch.alphas)?;
    let (log_emit, partials, alphas) = (&scratch.log_emit, &scratch.partials, &scratch.alphas);

    // backward pass on the same scaling: beta_t = p(z_{t+1..T} | s_t) / prod c
    let mut beta = vec![1.0; s_count];
    let mut w = vec![0.0; s_count];
    let mut next_beta = vec![0.0; s_count];
    let mut gamma_t: Vec<f64> = alphas[(len - 1) * s_count..].to_vec();
    for t in (0..len).rev() {
        // state posterior at t is alpha_t * beta_t
        if t < len - 1 {
            let a = traj.actions[t].0;
            let kernel = &theta.transition.kernel[a];
            let alpha = &alphas[t * s_count..(t + 1) * s_count];
            let e = &log_emit[(t + 1) * s_count..(t + 2) * s_count];
            let emax = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for n in 0..s_count {
                w[n] = (e[n] - emax).exp() * beta[n];
            }
            // pair posteriors, normalized jointly
            let mut z = 0.0;
            for s in 0..s_count {
                next_beta[s] = kernel[s].iter().zip(&w).map(|(k, x)| k * x).sum();
                z += alpha[s] * next_beta[s];
            }
            let ln_kernel_grad = &mut grad.ln_kernel[a];
            for s in 0..s_count {
                let scale = alpha[s] / z;
                if scale == 0.0 {
                    continue;
                }
                for n in 0..s_count {
                    ln_kernel_grad[s][n] += scale * kernel[s][n] * w[n];
                }
            }
            for s in 0..s_count {
                gamma_t[s] = alpha[s] * next_beta[s] / z;
            }
            // rescale to keep beta bounded
            let bmax = next_beta.iter().copied().fold(0.0, f64::max);
            for s in 0..s_count {
                beta[s] = next_beta[s] / bmax;
            }
        }
        accumulate_emission(traj, t, &gamma_t, &partials[t * s_count..(t + 1) * s_count], grad);
        if t == 0 {
            for s in 0..s_count {
                grad.ln_initial[s] += gamma_t[s];
            }
        }
    }
    Ok(total)
}

fn accumulate_emission(traj: &Trajectory, t: usize, gamma: &[f64], partials: &[[f64; 3]], grad: &mut NaturalGrad) {
    let reg = regime(traj, t);
    for (s, (g, d)) in gamma.iter().zip(partials).enumerate() {
        if *g == 0.0 {
            continue;
        }
        let slot = match reg {
            Regime::Initial => &mut grad.initial[s],
            Regime::Deterioration { .. } => &mut grad.deterioration[s],
            Regime::Repair { action, z_prev } => {
                grad.ar[action - 1] += g * d[0] * z_prev;
                &mut grad.repair[s]
            }
        };
        for f in 0..3 {
            slot[f] += g * d[f];
        }
    }
}

/// Dataset log-likelihood and natural-coordinate gradient.
pub fn dataset_loglik_grad(theta: &PomdpParams, data: &[Trajectory], mode: EmissionMode, grad: &mut NaturalGrad) -> Result<f64> {
    let cache = NormCache::new(theta);
    let mut scratch = Scratch::default();
    let mut total = 0.0;
    for (i, traj) in data.iter().enumerate() {
        total += loglik_grad_cached(theta, traj, mode, grad, &cache, &mut scratch).map_err(|e| with_trajectory(e, i))?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use maint_core::fixtures::theta_true;
    use maint_core::{initial_belief_conditioned, ActionIndex, ObservationModel, StudentParams, TransitionModel};

    fn single_state() -> PomdpParams {
        PomdpParams {
            transition: TransitionModel { initial: vec![1.0], kernel: vec![vec![vec![1.0]]; 2] },
            observation: ObservationModel {
                initial: vec![StudentParams::new(-3.0, 1.0, 6.0)],
                deterioration: vec![StudentParams::new(-0.4, 0.3, 5.0)],
                repair: vec![StudentParams::new(-2.0, 0.7, 4.0)],
                ar_coeff: vec![0.4],
            },
        }
    }

    #[test]
    fn analytic_partials_match_forward_mode() {
        let cases = [(-2.0, -1.5, 0.7, 4.0, 0.0), (-0.3, -0.1, 0.2, 12.0, 1.5), (-9.0, -2.0, 1.1, 2.5, 0.0), (-1.0, 0.5, 0.3, 30.0, 0.0)];
        for (x, loc, scale, dof, ub) in cases {
            let d: Dual<3> = ln_truncated_t(x, Dual::var(loc, 0), Dual::var(scale, 1), Dual::var(dof, 2), ub);
            let (v, g) = truncated_t_grad(x, loc, scale, dof, ub, ln_t_norm(Dual::var(dof, 0)), None);
            assert!((v - d.re).abs() < 1e-12);
            for i in 0..3 {
                assert!((g[i] - d.eps[i]).abs() < 1e-10 * d.eps[i].abs().max(1.0), "{i}: {} vs {}", g[i], d.eps[i]);
            }
        }
    }

    #[test]
    fn single_state_sums_emissions() {
        let theta = single_state();
        let traj = Trajectory {
            observations: vec![-2.5, -2.9, -1.6, -2.2],
            actions: vec![ActionIndex(0), ActionIndex(1), ActionIndex(0)],
            hidden_states: None,
        };
        let direct: f64 = (0..4).map(|t| ln_emission(&theta, &traj, t, 0)).sum();
        let ll = forward_loglik(&theta, &traj).unwrap();
        assert!((ll - direct).abs() < 1e-12);
        let obs = &theta.observation;
        let by_hand = obs.initial[0].truncated(0.0).ln_pdf(-2.5).unwrap()
            + obs.deterioration[0].truncated(2.5).ln_pdf(-0.4).unwrap()
            + StudentParams::new(0.4 * -2.9 - 2.0, 0.7, 4.0).truncated(0.0).ln_pdf(-1.6).unwrap()
            + obs.deterioration[0].truncated(1.6).ln_pdf(-0.6).unwrap();
        assert!((ll - by_hand).abs() < 1e-12);
    }

    #[test]
    fn first_step_matches_conditioned_belief() {
        let theta = theta_true();
        let traj = Trajectory { observations: vec![-4.0], actions: vec![], hidden_states: None };
        let ll = forward_loglik(&theta, &traj).unwrap();
        let b = initial_belief_conditioned(&theta, -4.0).unwrap();
        assert!((ll - b.log_normalizer).abs() < 1e-12);
    }

    #[test]
    fn degenerate_step_is_reported() {
        let mut theta = theta_true();
        theta.transition.initial = vec![1.0, 0.0, 0.0, 0.0];
        theta.transition.kernel[0][0] = vec![1.0, 0.0, 0.0, 0.0];
        let traj = Trajectory {
            observations: vec![-2.0, -2.5, -3.0],
            actions: vec![ActionIndex(0), ActionIndex(0)],
            hidden_states: None,
        };
        assert!(forward_loglik(&theta, &traj).is_ok());
        let mut theta2 = theta.clone();
        theta2.observation.deterioration[0] = StudentParams::new(-0.1, 1e-200, 3.0);
        // the standardized residual overflows, so the only reachable state has zero density
        let bad = Trajectory { observations: vec![-2.0, -12.0, -13.0], ..traj };
        match dataset_loglik(&theta2, &[bad.clone(), bad], EmissionMode::Full) {
            Err(InferenceError::Degenerate { trajectory: 0, step: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disabled_mode_counts_transitions() {
        let theta = theta_true();
        let traj = Trajectory {
            observations: vec![-2.0, -2.5, -3.0],
            actions: vec![ActionIndex(0), ActionIndex(1)],
            hidden_states: Some(vec![StateIndex(0), StateIndex(1), StateIndex(0)]),
        };
        let ll = trajectory_loglik(&theta, &traj, EmissionMode::Disabled).unwrap();
        let expect = 0.25f64.ln() + (1.0f64 / 6.0).ln() + 0.5f64.ln();
        assert!((ll - expect).abs() < 1e-12);
        let mut g = NaturalGrad::zeros(theta.dims());
        trajectory_loglik_grad(&theta, &traj, EmissionMode::Disabled, &mut g).unwrap();
        assert_eq!(g.ln_kernel[0][0][1], 1.0);
        assert_eq!(g.ln_kernel[1][1][0], 1.0);
        assert_eq!(g.ln_initial[0], 1.0);
        let unlabeled = Trajectory { hidden_states: None, ..traj };
        assert!(trajectory_loglik(&theta, &unlabeled, EmissionMode::Disabled).is_err());
    }
}
