//! Student-t and upper-truncated Student-t distributions.
//!
//! All density and CDF code is generic over [`Real`] so the inference crate can
//! push dual numbers through it. The CDF goes through the regularized
//! incomplete beta function, evaluated with the modified Lentz continued
//! fraction and kept in log space so that extreme truncations do not
//! underflow. Sampling inverts the CDF with a bracketed Newton iteration.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dual::Real;
use crate::error::{ModelError, Result};

const CF_MAX_ITER: usize = 500;
const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;

fn beta_cf<R: Real>(a: R, b: R, x: R) -> R {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let guard = |v: R| if v.value().abs() < CF_TINY { R::cst(CF_TINY) } else { v };
    let mut c = R::cst(1.0);
    let mut d = guard(R::cst(1.0) - qab * x / qap);
    d = R::cst(1.0) / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = (b - m) * x * m / ((qam + m2) * (a + m2));
        d = guard(aa * d + 1.0);
        c = guard(aa / c + 1.0);
        d = R::cst(1.0) / d;
        h = h * d * c;
        let aa = -((a + m) * (qab + m) * x) / ((a + m2) * (qap + m2));
        d = guard(aa * d + 1.0);
        c = guard(aa / c + 1.0);
        d = R::cst(1.0) / d;
        let del = d * c;
        h = h * del;
        if (del.value() - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// `2F1(a + b, 1; a + 1; x)`, the same quantity as [`beta_cf`], summed as a
/// power series (all terms positive; converges geometrically for small `x`).
fn beta_series<R: Real>(a: R, b: R, x: R) -> R {
    let mut term = R::cst(1.0);
    let mut sum = R::cst(1.0);
    let apb = a + b;
    let ap1 = a + 1.0;
    for n in 0..CF_MAX_ITER {
        let n = n as f64;
        term = term * x * (apb + n) / (ap1 + n);
        sum = sum + term;
        if term.value() < CF_EPS * 0.1 * sum.value() {
            break;
        }
    }
    sum
}

/// Below this argument the series beats the continued fraction.
const SERIES_MAX_X: f64 = 0.3;

fn beta_front<R: Real>(a: R, b: R, x: R) -> R {
    if x.value() < SERIES_MAX_X {
        beta_series(a, b, x)
    } else {
        beta_cf(a, b, x)
    }
}

/// `ln I_x(a, b)`. `x` and `1 - x` are passed separately to avoid cancellation.
pub fn ln_beta_reg<R: Real>(a: R, b: R, x: R, one_minus_x: R) -> R {
    ln_beta_reg_with(a, b, x, one_minus_x, (a + b).ln_gamma() - a.ln_gamma() - b.ln_gamma())
}

/// [`ln_beta_reg`] with `ln Γ(a+b) - ln Γ(a) - ln Γ(b)` supplied by the caller.
pub fn ln_beta_reg_with<R: Real>(a: R, b: R, x: R, one_minus_x: R, ln_inv_beta: R) -> R {
    let xv = x.value();
    if xv <= 0.0 {
        return R::cst(f64::NEG_INFINITY);
    }
    if one_minus_x.value() <= 0.0 {
        return R::cst(0.0);
    }
    let ln_front = a * x.ln() + b * one_minus_x.ln() + ln_inv_beta;
    if xv < (a.value() + 1.0) / (a.value() + b.value() + 2.0) {
        ln_front + beta_front(a, b, x).ln() - a.ln()
    } else {
        let tail = (ln_front + beta_front(b, a, one_minus_x).ln() - b.ln()).exp();
        (-tail).ln_1p()
    }
}

/// `ln Γ((dof+1)/2) - ln Γ(dof/2) - ln Γ(1/2)`, the dof-only term shared by
/// the Student-t density and CDF.
pub fn ln_t_norm<R: Real>(dof: R) -> R {
    let half = dof * 0.5;
    (half + 0.5).ln_gamma() - half.ln_gamma() - R::cst(0.5 * PI.ln())
}

/// Log density of the standard Student-t with `dof` degrees of freedom.
pub fn ln_t_pdf<R: Real>(z: R, dof: R) -> R {
    ln_t_pdf_with(z, dof, ln_t_norm(dof))
}

/// [`ln_t_pdf`] with a precomputed [`ln_t_norm`].
pub fn ln_t_pdf_with<R: Real>(z: R, dof: R, norm: R) -> R {
    norm - dof.ln() * 0.5 - (dof * 0.5 + 0.5) * (z * z / dof).ln_1p()
}

/// Log CDF of the standard Student-t at `w` (`+inf` allowed).
pub fn ln_t_cdf<R: Real>(w: R, dof: R) -> R {
    ln_t_cdf_with(w, dof, ln_t_norm(dof))
}

/// [`ln_t_cdf`] with a precomputed [`ln_t_norm`].
pub fn ln_t_cdf_with<R: Real>(w: R, dof: R, norm: R) -> R {
    let wv = w.value();
    if wv == f64::INFINITY {
        return R::cst(0.0);
    }
    if wv == f64::NEG_INFINITY {
        return R::cst(f64::NEG_INFINITY);
    }
    if wv.abs() < 1e-9 {
        // F(w) = 1/2 + f(0) w + O(w^3)
        return w * (ln_t_pdf_with(R::cst(0.0), dof, norm).exp() * 2.0) - LN_2;
    }
    let w2 = w * w;
    let denom = dof + w2;
    let ln_tail = ln_beta_reg_with(dof * 0.5, R::cst(0.5), dof / denom, w2 / denom, norm) - LN_2;
    if wv < 0.0 {
        ln_tail
    } else {
        (-ln_tail.exp()).ln_1p()
    }
}

/// Log density of `TS(loc, scale, dof, ub)` at `x` for data constants `x`, `ub`.
///
/// Returns `-inf` above the bound. `ub = +inf` gives the untruncated density.
pub fn ln_truncated_t<R: Real>(x: f64, loc: R, scale: R, dof: R, ub: f64) -> R {
    if x > ub {
        return R::cst(f64::NEG_INFINITY);
    }
    let z = (R::cst(x) - loc) / scale;
    let body = ln_t_pdf(z, dof) - scale.ln();
    if ub == f64::INFINITY {
        body
    } else {
        body - ln_t_cdf((R::cst(ub) - loc) / scale, dof)
    }
}

/// Location, scale and degrees of freedom of a Student-t regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudentParams {
    pub loc: f64,
    pub scale: f64,
    pub dof: f64,
}

impl StudentParams {
    pub fn new(loc: f64, scale: f64, dof: f64) -> Self {
        Self { loc, scale, dof }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.loc.is_finite() && self.scale > 0.0 && self.scale.is_finite() && self.dof > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "student-t parameters must satisfy finite loc, scale > 0, dof > 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    pub fn truncated(&self, upper_bound: f64) -> TruncatedTParams {
        TruncatedTParams { loc: self.loc, scale: self.scale, dof: self.dof, upper_bound }
    }
}

mod bound_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Student-t truncated from above at `upper_bound` (`+inf` means untruncated,
/// serialized as `null`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedTParams {
    pub loc: f64,
    pub scale: f64,
    pub dof: f64,
    #[serde(with = "bound_serde")]
    pub upper_bound: f64,
}

impl TruncatedTParams {
    pub fn new(loc: f64, scale: f64, dof: f64, upper_bound: f64) -> Result<Self> {
        let p = Self { loc, scale, dof, upper_bound };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        StudentParams::new(self.loc, self.scale, self.dof).validate()?;
        if self.upper_bound.is_nan() || self.upper_bound == f64::NEG_INFINITY {
            return Err(ModelError::InvalidParameter(format!(
                "upper bound must be finite or +inf (got {})",
                self.upper_bound
            )));
        }
        Ok(())
    }

    fn std_bound(&self) -> f64 {
        if self.upper_bound == f64::INFINITY {
            f64::INFINITY
        } else {
            (self.upper_bound - self.loc) / self.scale
        }
    }

    /// Log normalizing mass `ln CDF_t(ub)` under the untruncated distribution.
    pub fn ln_mass(&self) -> f64 {
        ln_t_cdf(self.std_bound(), self.dof)
    }

    /// Log density; `-inf` above the bound.
    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(ModelError::NonFinite(format!("truncated-t density evaluated at {x}")));
        }
        Ok(ln_truncated_t(x, self.loc, self.scale, self.dof, self.upper_bound))
    }

    /// CDF of the truncated distribution.
    pub fn cdf(&self, x: f64) -> f64 {
        if x >= self.upper_bound {
            return 1.0;
        }
        let z = (x - self.loc) / self.scale;
        (ln_t_cdf(z, self.dof) - self.ln_mass()).exp()
    }

    /// Inverse-CDF draw; the result never exceeds the upper bound.
    pub fn sample<G: Rng + ?Sized>(&self, rng: &mut G) -> f64 {
        // u in (0, 1]
        let u = 1.0 - rng.random::<f64>();
        let w = self.std_bound();
        let target = u.ln() + ln_t_cdf(w, self.dof);
        let q = std_t_quantile_ln(target, self.dof, w);
        (self.loc + self.scale * q).min(self.upper_bound)
    }
}

/// Solve `ln F_t(q; dof) = target` for `q <= bound`.
pub fn std_t_quantile_ln(target: f64, dof: f64, bound: f64) -> f64 {
    let g = |q: f64| ln_t_cdf(q, dof) - target;
    if g(bound) <= 0.0 {
        return bound;
    }
    let start = bound.min(0.0);
    let (mut lo, mut hi);
    if g(start) < 0.0 {
        lo = start;
        if bound.is_finite() {
            hi = bound;
        } else {
            let mut step = 1.0;
            hi = start + step;
            while g(hi) < 0.0 {
                lo = hi;
                step *= 2.0;
                hi = start + step;
            }
        }
    } else {
        hi = start;
        let mut step = 1.0;
        lo = start - step;
        while g(lo) > 0.0 {
            hi = lo;
            step *= 2.0;
            lo = start - step;
            if step > 1e300 {
                return lo;
            }
        }
    }

    let eval = |q: f64| {
        let lf = ln_t_cdf(q, dof);
        (lf - target, (ln_t_pdf(q, dof) - lf).exp())
    };
    let mut q = 0.5 * (lo + hi);
    let mut dx_old = hi - lo;
    let mut dx = dx_old;
    let (mut gq, mut dg) = eval(q);
    for _ in 0..200 {
        let newton_leaves = ((q - hi) * dg - gq) * ((q - lo) * dg - gq) > 0.0;
        if newton_leaves || (2.0 * gq).abs() > (dx_old * dg).abs() || !dg.is_finite() {
            dx_old = dx;
            dx = 0.5 * (hi - lo);
            q = lo + dx;
        } else {
            dx_old = dx;
            dx = gq / dg;
            q -= dx;
        }
        if dx.abs() <= 1e-14 * (1.0 + q.abs()) || gq == 0.0 {
            break;
        }
        (gq, dg) = eval(q);
        if gq < 0.0 {
            lo = q;
        } else {
            hi = q;
        }
    }
    q
}
