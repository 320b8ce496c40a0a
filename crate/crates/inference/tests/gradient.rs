use maint_core::fixtures::theta_true;
use maint_core::sim::stream_rng;
use maint_core::Dims;
use maint_inference::transform::flatten;
use maint_inference::{EmissionMode, Layout, LogDensity, PosteriorTarget, PriorConfig};
use maint_testkit::{random_params, random_trajectory};
use rand::Rng;

fn worst_relative_error(target: &PosteriorTarget, u: &[f64], h: f64) -> f64 {
    let e = target.evaluate(u);
    assert!(e.flag.is_none(), "{:?}", e.flag);
    let mut worst: f64 = 0.0;
    let mut x = u.to_vec();
    for i in 0..u.len() {
        x[i] = u[i] + h;
        let fp = target.value(&x).unwrap();
        x[i] = u[i] - h;
        let fm = target.value(&x).unwrap();
        x[i] = u[i];
        let fd = (fp - fm) / (2.0 * h);
        let denom = fd.abs().max(e.grad[i].abs()).max(1e-2);
        worst = worst.max((e.grad[i] - fd).abs() / denom);
    }
    worst
}

#[test]
fn posterior_gradient_matches_finite_differences() {
    let theta = theta_true();
    let mut rng = stream_rng(201, 0);
    let data: Vec<_> = (0..8).map(|_| random_trajectory(&mut rng, &theta, 20)).collect();
    let target = PosteriorTarget::new(data, PriorConfig::structured(theta.dims()), EmissionMode::Full).unwrap();
    let center = target.layout.encode(&theta).unwrap().0;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let u: Vec<f64> = center.iter().map(|c| c + rng.random_range(-0.5..0.5)).collect();
        worst = worst.max(worst_relative_error(&target, &u, 1e-5));
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn gradient_on_other_dimensions() {
    let mut rng = stream_rng(202, 0);
    for (s, a) in [(2, 2), (3, 3), (5, 2)] {
        let theta = random_params(&mut rng, s, a);
        let data: Vec<_> = (0..4).map(|_| random_trajectory(&mut rng, &theta, 10)).collect();
        let target = PosteriorTarget::new(data, PriorConfig::structured(Dims { states: s, actions: a }), EmissionMode::Full).unwrap();
        let u = target.layout.encode(&theta).unwrap().0;
        let err = worst_relative_error(&target, &u, 1e-5);
        assert!(err < 1e-4, "S={s} A={a}: {err}");
    }
}

#[test]
fn disabled_emission_gradient_matches_finite_differences() {
    let theta = theta_true();
    let mut rng = stream_rng(203, 0);
    let data: Vec<_> = (0..8).map(|_| random_trajectory(&mut rng, &theta, 20)).collect();
    let target = PosteriorTarget::new(data, PriorConfig::structured(theta.dims()), EmissionMode::Disabled).unwrap();
    let u = target.prior_center();
    assert!(worst_relative_error(&target, &u, 1e-5) < 1e-4);
}

#[test]
fn finite_difference_fallback_agrees_with_exact() {
    let theta = theta_true();
    let mut rng = stream_rng(204, 0);
    let data: Vec<_> = (0..3).map(|_| random_trajectory(&mut rng, &theta, 10)).collect();
    let exact = PosteriorTarget::new(data, PriorConfig::structured(theta.dims()), EmissionMode::Full).unwrap();
    let fd = PosteriorTarget { gradient: maint_inference::GradientMode::FiniteDifference { h: 1e-5 }, ..exact.clone() };
    let u = exact.layout.encode(&theta).unwrap().0;
    let (a, b) = (exact.evaluate(&u), fd.evaluate(&u));
    assert_eq!(a.value, b.value);
    for (x, y) in a.grad.iter().zip(&b.grad) {
        assert!((x - y).abs() <= 1e-4 * x.abs().max(1.0));
    }
}

#[test]
fn empty_dataset_is_prior_only() {
    let priors = PriorConfig::structured(Dims::default());
    let target = PosteriorTarget::new(Vec::new(), priors.clone(), EmissionMode::Full).unwrap();
    let theta = theta_true();
    let (u, _) = target.layout.encode(&theta).unwrap();
    let d = target.layout.decode(&u).unwrap();
    let prior = priors.log_density(&d.params, d.ln_initial(), d.ln_kernel(), None);
    assert!((target.log_density(&u) - (prior + d.log_jacobian)).abs() < 1e-9);
}

/// Constrained coordinates with the last entry of every simplex dropped, so
/// the decode map is square.
fn reduced(layout: &Layout, u: &[f64]) -> Vec<f64> {
    let theta = layout.decode(u).unwrap().params;
    let flat = flatten(&theta);
    let s = layout.states;
    let simplex_entries = s * (1 + layout.actions * s);
    let mut out = Vec::new();
    for row in flat[..simplex_entries].chunks(s) {
        out.extend_from_slice(&row[..s - 1]);
    }
    out.extend_from_slice(&flat[simplex_entries..]);
    out
}

fn log_abs_det(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut total = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|i, j| m[*i][c].abs().total_cmp(&m[*j][c].abs())).unwrap();
        m.swap(c, p);
        let pivot = m[c][c];
        total += pivot.abs().ln();
        for r in c + 1..n {
            let f = m[r][c] / pivot;
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
        }
    }
    total
}

#[test]
fn log_jacobian_matches_numerical_determinant() {
    let mut rng = stream_rng(205, 0);
    let layout = Layout::new(Dims { states: 3, actions: 3 });
    for _ in 0..10 {
        let theta = random_params(&mut rng, 3, 3);
        let (u, _) = layout.encode(&theta).unwrap();
        let n = u.len();
        assert_eq!(reduced(&layout, &u).len(), n);
        let h = 1e-6;
        let mut jac = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut up = u.clone();
            up[j] += h;
            let fp = reduced(&layout, &up);
            up[j] -= 2.0 * h;
            let fm = reduced(&layout, &up);
            for i in 0..n {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let numeric = log_abs_det(jac);
        let analytic = layout.decode(&u).unwrap().log_jacobian;
        assert!((numeric - analytic).abs() < 1e-6, "{numeric} vs {analytic}");
    }
}
