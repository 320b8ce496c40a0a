//! Log posterior density in unconstrained coordinates.

use maint_core::{Dims, PomdpParams, Trajectory};
use serde::{Deserialize, Serialize};

use crate::error::{InferenceError, Result};
use crate::likelihood::{dataset_loglik, dataset_loglik_grad, EmissionMode};
use crate::priors::PriorConfig;
use crate::transform::{Layout, NaturalGrad};

/// A differentiable log density on `R^dim`.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `q`, writing its gradient into `grad`. Points outside
    /// the support return `-inf` and leave `grad` zeroed.
    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, q: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.log_density_grad(q, &mut g)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GradientMode {
    /// Analytic forward-backward pass with forward-mode emission partials.
    #[default]
    Exact,
    /// Central finite differences with step `h` (for debugging only).
    FiniteDifference { h: f64 },
}

/// Value, gradient and failure flag of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Why the point was rejected, if it was.
    pub flag: Option<String>,
}

/// `sum_traj log p(traj | theta) + log p(theta) + log|J|` over unconstrained
/// coordinates.
#[derive(Debug, Clone)]
pub struct PosteriorTarget {
    pub layout: Layout,
    pub priors: PriorConfig,
    pub data: Vec<Trajectory>,
    pub mode: EmissionMode,
    pub gradient: GradientMode,
}

impl PosteriorTarget {
    pub fn new(data: Vec<Trajectory>, priors: PriorConfig, mode: EmissionMode) -> Result<Self> {
        priors.validate()?;
        let dims = priors.dims();
        for (i, t) in data.iter().enumerate() {
            t.validate(dims).map_err(|e| InferenceError::Incompatible(format!("trajectory {i}: {e}")))?;
            if mode == EmissionMode::Disabled && t.hidden_states.is_none() {
                return Err(InferenceError::Incompatible(format!("trajectory {i} has no hidden states")));
            }
        }
        Ok(Self { layout: Layout::new(dims), priors, data, mode, gradient: GradientMode::Exact })
    }

    pub fn dims(&self) -> Dims {
        self.layout.dims()
    }

    /// Log posterior without the gradient; `Err` if the point is rejected.
    pub fn value(&self, u: &[f64]) -> Result<f64> {
        let d = self.layout.decode(u)?;
        let prior = self.priors.log_density(&d.params, d.ln_initial(), d.ln_kernel(), None);
        let lik = dataset_loglik(&d.params, &self.data, self.mode)?;
        Ok(lik + prior + d.log_jacobian)
    }

    /// Log-likelihood part only, at decoded parameters.
    pub fn loglik(&self, theta: &PomdpParams) -> Result<f64> {
        dataset_loglik(theta, &self.data, self.mode)
    }

    pub fn evaluate(&self, u: &[f64]) -> Evaluation {
        match self.gradient {
            GradientMode::Exact => self.evaluate_exact(u),
            GradientMode::FiniteDifference { h } => {
                let value = match self.value(u) {
                    Ok(v) => v,
                    Err(e) => return rejected(u.len(), e),
                };
                let mut x = u.to_vec();
                let mut grad = vec![0.0; u.len()];
                for i in 0..u.len() {
                    x[i] = u[i] + h;
                    let fp = self.value(&x);
                    x[i] = u[i] - h;
                    let fm = self.value(&x);
                    x[i] = u[i];
                    match (fp, fm) {
                        (Ok(a), Ok(b)) => grad[i] = (a - b) / (2.0 * h),
                        (Err(e), _) | (_, Err(e)) => return rejected(u.len(), e),
                    }
                }
                Evaluation { value, grad, flag: None }
            }
        }
    }

    fn evaluate_exact(&self, u: &[f64]) -> Evaluation {
        let d = match self.layout.decode(u) {
            Ok(d) => d,
            Err(e) => return rejected(u.len(), e),
        };
        let mut g = NaturalGrad::zeros(self.dims());
        let prior = self.priors.log_density(&d.params, d.ln_initial(), d.ln_kernel(), Some(&mut g));
        let lik = match dataset_loglik_grad(&d.params, &self.data, self.mode, &mut g) {
            Ok(v) => v,
            Err(e) => return rejected(u.len(), e),
        };
        let value = lik + prior + d.log_jacobian;
        if !value.is_finite() {
            return rejected(u.len(), InferenceError::Decode(format!("log density {value}")));
        }
        let grad = self.layout.pullback(u, &d, &g);
        if grad.iter().any(|x| !x.is_finite()) {
            return rejected(u.len(), InferenceError::Decode("non-finite gradient".into()));
        }
        Evaluation { value, grad, flag: None }
    }

    /// Unconstrained coordinates of the prior's mode in these coordinates:
    /// simplex rows at the Dirichlet mean, scales at the half-normal scale,
    /// dofs at `2 + shape / rate`, coefficients at `alpha / (alpha + beta)` and
    /// locations at their prior means (initial locations solved for the
    /// ordering transform by Newton's method).
    pub fn prior_center(&self) -> Vec<f64> {
        let p = &self.priors;
        let mean_row = |alpha: &[f64]| {
            let s: f64 = alpha.iter().sum();
            alpha.iter().map(|a| a / s).collect::<Vec<f64>>()
        };
        let group = |g: &crate::priors::GroupPrior| {
            g.loc
                .iter()
                .map(|n| maint_core::StudentParams::new(n.mean, g.scale.sd, crate::transform::DOF_SHIFT + g.dof.shape / g.dof.rate))
                .collect::<Vec<_>>()
        };
        let mut initial = group(&p.initial);
        // prior means need not be decreasing; enforce a minimal gap
        for i in 1..initial.len() {
            if initial[i].loc >= initial[i - 1].loc - 0.5 {
                initial[i].loc = initial[i - 1].loc - 0.5;
            }
        }
        let theta = PomdpParams {
            transition: maint_core::TransitionModel {
                initial: mean_row(&p.alpha0),
                kernel: p.alpha_t.iter().map(|rows| rows.iter().map(|r| mean_row(r)).collect()).collect(),
            },
            observation: maint_core::ObservationModel {
                initial,
                deterioration: group(&p.deterioration),
                repair: group(&p.repair),
                ar_coeff: p.ar.iter().map(|b| b.alpha / (b.alpha + b.beta)).collect(),
            },
        };
        let (mut u, _) = self.layout.encode(&theta).expect("prior center is a valid parameter set");
        self.refine_ordered_locations(&mut u);
        u
    }

    /// Newton iterations on the initial-location block of the prior-only
    /// density (the only block whose mode has no closed form).
    fn refine_ordered_locations(&self, u: &mut [f64]) {
        let start = self.layout.group_start(0, 0);
        let n = self.dims().states;
        let prior_only = PosteriorTarget { data: Vec::new(), ..self.clone() };
        for _ in 0..100 {
            let g0 = prior_only.evaluate(u).grad;
            let block: Vec<f64> = g0[start..start + n].to_vec();
            if block.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-12 {
                break;
            }
            // numerical Hessian of the block
            let h = 1e-5;
            let mut hess = vec![vec![0.0; n]; n];
            for j in 0..n {
                let mut up = u.to_vec();
                up[start + j] += h;
                let gp = prior_only.evaluate(&up).grad;
                up[start + j] -= 2.0 * h;
                let gm = prior_only.evaluate(&up).grad;
                for i in 0..n {
                    hess[i][j] = (gp[start + i] - gm[start + i]) / (2.0 * h);
                }
            }
            let step = solve(hess, block.iter().map(|x| -x).collect());
            let Some(step) = step else { break };
            for i in 0..n {
                u[start + i] += step[i];
            }
        }
    }
}

fn rejected(dim: usize, e: InferenceError) -> Evaluation {
    Evaluation { value: f64::NEG_INFINITY, grad: vec![0.0; dim], flag: Some(e.to_string()) }
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|i, j| a[*i][c].abs().total_cmp(&a[*j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

impl LogDensity for PosteriorTarget {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let e = self.evaluate(q);
        grad.copy_from_slice(&e.grad);
        e.value
    }

    fn log_density(&self, q: &[f64]) -> f64 {
        self.value(q).unwrap_or(f64::NEG_INFINITY)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_center_is_stationary() {
        let target = PosteriorTarget::new(Vec::new(), PriorConfig::structured(Dims::default()), EmissionMode::Full).unwrap();
        let u = target.prior_center();
        let e = target.evaluate(&u);
        let norm = e.grad.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}: {:?}", e.grad);
    }

    #[test]
    fn rejected_points_have_zero_gradient() {
        let target = PosteriorTarget::new(Vec::new(), PriorConfig::structured(Dims::default()), EmissionMode::Full).unwrap();
        let mut u = target.prior_center();
        u[target.layout.group_start(2, 1)] = 1e4;
        let e = target.evaluate(&u);
        assert_eq!(e.value, f64::NEG_INFINITY);
        assert!(e.flag.is_some());
        assert!(e.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn mismatched_data_rejected() {
        let priors = PriorConfig::structured(Dims { states: 3, actions: 3 });
        let traj = Trajectory { observations: vec![-1.0, -2.0], actions: vec![maint_core::ActionIndex(0)], hidden_states: Some(vec![maint_core::StateIndex(3); 2]) };
        assert!(PosteriorTarget::new(vec![traj], priors, EmissionMode::Full).is_err());
    }
}
