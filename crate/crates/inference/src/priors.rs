//! Prior distributions over the model parameters.

use std::f64::consts::PI;

use maint_core::{Dims, PomdpParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;

use crate::error::{InferenceError, Result};
use crate::transform::{NaturalGrad, DOF_SHIFT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfNormalPrior {
    pub sd: f64,
}

/// Gamma(shape, rate) on `dof - 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub alpha: f64,
    pub beta: f64,
}

/// Priors of one observation regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPrior {
    /// One location prior per state.
    pub loc: Vec<NormalPrior>,
    pub scale: HalfNormalPrior,
    pub dof: GammaPrior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub alpha0: Vec<f64>,
    /// `alpha_t[a][s]` is the Dirichlet concentration of row `T[a][s]`.
    pub alpha_t: Vec<Vec<Vec<f64>>>,
    pub initial: GroupPrior,
    pub deterioration: GroupPrior,
    pub repair: GroupPrior,
    /// One prior per repair action.
    pub ar: Vec<BetaPrior>,
}

impl PriorConfig {
    /// Structured defaults: do-nothing rows favour staying or moving one or two
    /// grades worse, the minor repair favours staying or improving one grade,
    /// and every stronger repair favours a return to the best state.
    pub fn structured(dims: Dims) -> Self {
        let (s_count, a_count) = (dims.states, dims.actions);
        let mut alpha_t = Vec::with_capacity(a_count);
        for a in 0..a_count {
            let rows = (0..s_count)
                .map(|s| {
                    (0..s_count)
                        .map(|n| match a {
                            0 if n == s => 6.0,
                            0 if n == s + 1 => 2.0,
                            0 if n == s + 2 => 1.0,
                            0 => 0.1,
                            1 if n == s || n + 1 == s => 4.0,
                            1 => 0.2,
                            _ if n == 0 => 6.0,
                            _ => 0.3,
                        })
                        .collect()
                })
                .collect();
            alpha_t.push(rows);
        }
        let vague = |mean: f64, sd: f64| vec![NormalPrior { mean, sd }; s_count];
        let group = |loc: Vec<NormalPrior>| GroupPrior {
            loc,
            scale: HalfNormalPrior { sd: 2.0 },
            dof: GammaPrior { shape: 2.0, rate: 0.1 },
        };
        let initial_locs = (0..s_count).map(|s| NormalPrior { mean: -3.0 * (s + 1) as f64, sd: 3.0 }).collect();
        Self {
            alpha0: vec![1.0; s_count],
            alpha_t,
            initial: group(initial_locs),
            deterioration: group(vague(0.0, 5.0)),
            repair: group(vague(0.0, 5.0)),
            ar: vec![BetaPrior { alpha: 2.0, beta: 2.0 }; a_count - 1],
        }
    }

    pub fn dims(&self) -> Dims {
        Dims { states: self.alpha0.len(), actions: self.alpha_t.len() }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        let s = dims.states;
        let bad = |what: &str| Err(InferenceError::Prior(what.to_string()));
        if s < 2 || dims.actions < 1 {
            return bad("need at least two states and one action");
        }
        if self.alpha_t.iter().any(|rows| rows.len() != s || rows.iter().any(|r| r.len() != s)) {
            return bad("every alpha_t slice must be S x S");
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !self.alpha0.iter().chain(self.alpha_t.iter().flatten().flatten()).all(|x| positive(*x)) {
            return bad("Dirichlet concentrations must be positive and finite");
        }
        for g in [&self.initial, &self.deterioration, &self.repair] {
            if g.loc.len() != s {
                return bad("each location group needs one prior per state");
            }
            if !g.loc.iter().all(|p| p.mean.is_finite() && positive(p.sd))
                || !positive(g.scale.sd)
                || !positive(g.dof.shape)
                || !positive(g.dof.rate)
            {
                return bad("observation prior hyperparameters must be positive and finite");
            }
        }
        if self.ar.len() != dims.actions - 1 || !self.ar.iter().all(|b| positive(b.alpha) && positive(b.beta)) {
            return bad("need one positive Beta prior per repair action");
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("priors serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Log prior density of `theta`, accumulating its natural-coordinate
    /// gradient into `grad` when given. `ln_initial`/`ln_kernel` are the log
    /// simplex entries (passed separately so tiny probabilities keep precision).
    pub fn log_density(
        &self,
        theta: &PomdpParams,
        ln_initial: &[f64],
        ln_kernel: &[Vec<Vec<f64>>],
        mut grad: Option<&mut NaturalGrad>,
    ) -> f64 {
        let mut total = dirichlet(&self.alpha0, ln_initial, grad.as_deref_mut().map(|g| &mut g.ln_initial[..]));
        for (a, rows) in ln_kernel.iter().enumerate() {
            for (s, row) in rows.iter().enumerate() {
                total += dirichlet(&self.alpha_t[a][s], row, grad.as_deref_mut().map(|g| &mut g.ln_kernel[a][s][..]));
            }
        }
        let obs = &theta.observation;
        for (gi, (prior, params)) in
            [(&self.initial, &obs.initial), (&self.deterioration, &obs.deterioration), (&self.repair, &obs.repair)]
                .into_iter()
                .enumerate()
        {
            for (i, p) in params.iter().enumerate() {
                let (lp, d) = group_terms(prior, i, p.loc, p.scale, p.dof);
                total += lp;
                if let Some(g) = grad.as_deref_mut() {
                    let slot = match gi {
                        0 => &mut g.initial[i],
                        1 => &mut g.deterioration[i],
                        _ => &mut g.repair[i],
                    };
                    for f in 0..3 {
                        slot[f] += d[f];
                    }
                }
            }
        }
        for (j, (b, k)) in self.ar.iter().zip(&obs.ar_coeff).enumerate() {
            total += ln_gamma(b.alpha + b.beta) - ln_gamma(b.alpha) - ln_gamma(b.beta)
                + (b.alpha - 1.0) * k.ln()
                + (b.beta - 1.0) * (-k).ln_1p();
            if let Some(g) = grad.as_deref_mut() {
                g.ar[j] += (b.alpha - 1.0) / k - (b.beta - 1.0) / (1.0 - k);
            }
        }
        total
    }
}

fn dirichlet(alpha: &[f64], ln_p: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let sum: f64 = alpha.iter().sum();
    let mut lp = ln_gamma(sum) - alpha.iter().map(|a| ln_gamma(*a)).sum::<f64>();
    for (a, l) in alpha.iter().zip(ln_p) {
        lp += (a - 1.0) * l;
    }
    if let Some(g) = grad {
        for (gi, a) in g.iter_mut().zip(alpha) {
            *gi += a - 1.0;
        }
    }
    lp
}

/// Log prior and `[d loc, d scale, d dof]` of one regime entry.
fn group_terms(prior: &GroupPrior, state: usize, loc: f64, scale: f64, dof: f64) -> (f64, [f64; 3]) {
    let n = prior.loc[state];
    let ln_norm = |sd: f64| -0.5 * (2.0 * PI).ln() - sd.ln();
    let loc_lp = ln_norm(n.sd) - 0.5 * ((loc - n.mean) / n.sd).powi(2);
    let sd = prior.scale.sd;
    let scale_lp = ln_norm(sd) + 2f64.ln() - 0.5 * (scale / sd).powi(2);
    let GammaPrior { shape, rate } = prior.dof;
    let y = dof - DOF_SHIFT;
    let dof_lp = shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * y.ln() - rate * y;
    let grad = [-(loc - n.mean) / (n.sd * n.sd), -scale / (sd * sd), (shape - 1.0) / y - rate];
    (loc_lp + scale_lp + dof_lp, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use maint_core::fixtures::theta_true;
    use statrs::distribution::{Beta, Continuous, Gamma, Normal};

    #[test]
    fn structured_default_shape() {
        let p = PriorConfig::structured(Dims::default());
        p.validate().unwrap();
        assert_eq!(p.alpha_t[0][0], vec![6.0, 2.0, 1.0, 0.1]);
        assert_eq!(p.alpha_t[0][3], vec![0.1, 0.1, 0.1, 6.0]);
        assert_eq!(p.alpha_t[1][2], vec![0.2, 4.0, 4.0, 0.2]);
        assert_eq!(p.alpha_t[2][1], vec![6.0, 0.3, 0.3, 0.3]);
        let means: Vec<f64> = p.initial.loc.iter().map(|n| n.mean).collect();
        assert_eq!(means, vec![-3.0, -6.0, -9.0, -12.0]);
    }

    #[test]
    fn fixture_rows_are_clamped_prior_modes() {
        let p = PriorConfig::structured(Dims::default());
        let theta = theta_true();
        for (a, rows) in p.alpha_t.iter().enumerate() {
            for (s, alpha) in rows.iter().enumerate() {
                let raw: Vec<f64> = alpha.iter().map(|x| (x - 1.0).max(0.0)).collect();
                let total: f64 = raw.iter().sum();
                for (n, r) in raw.iter().enumerate() {
                    assert!((theta.transition.kernel[a][s][n] - r / total).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn observation_terms_match_statrs() {
        let p = PriorConfig::structured(Dims::default());
        let (lp, _) = group_terms(&p.initial, 1, -4.2, 0.8, 9.5);
        let expect = Normal::new(-6.0, 3.0).unwrap().ln_pdf(-4.2)
            + Normal::new(0.0, 2.0).unwrap().ln_pdf(0.8)
            + 2f64.ln()
            + Gamma::new(2.0, 0.1).unwrap().ln_pdf(7.5);
        assert!((lp - expect).abs() < 1e-12);
        let b = Beta::new(2.0, 2.0).unwrap().ln_pdf(0.3);
        let beta_lp = ln_gamma(4.0) - 2.0 * ln_gamma(2.0) + 0.3f64.ln() + 0.7f64.ln();
        assert!((b - beta_lp).abs() < 1e-12);
    }

    #[test]
    fn invalid_priors_rejected() {
        let mut p = PriorConfig::structured(Dims::default());
        p.alpha_t[1][2][0] = 0.0;
        assert!(p.validate().is_err());
        let mut p = PriorConfig::structured(Dims::default());
        p.ar.pop();
        assert!(p.validate().is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = PriorConfig::structured(Dims::default());
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.repair.scale.sd = 2.5;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
