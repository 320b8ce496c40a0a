use maint_core::sim::stream_rng;
use maint_core::tdist::TruncatedTParams;
use maint_testkit::{ks_truncated_t, quad, statrs_ln_truncated_t};
use rand::Rng;

fn tt(loc: f64, scale: f64, dof: f64, ub: f64) -> TruncatedTParams {
    TruncatedTParams::new(loc, scale, dof, ub).unwrap()
}

fn random_params(rng: &mut impl Rng) -> TruncatedTParams {
    let loc: f64 = rng.random_range(-15.0..2.0);
    let scale: f64 = rng.random_range(0.1..3.0);
    let dof = rng.random_range(2.5..30.0);
    let ub = if rng.random_bool(0.8) { rng.random_range((loc - 2.0 * scale).min(-0.5)..0.0) } else { f64::INFINITY };
    tt(loc, scale, dof, ub)
}

#[test]
fn density_integrates_to_one() {
    let mut rng = stream_rng(404, 0);
    for _ in 0..100 {
        let p = random_params(&mut rng);
        let pdf = |x: f64| p.ln_pdf(x).unwrap().exp();
        let total = if p.upper_bound.is_finite() {
            quad::integrate_below_peaked(&pdf, p.loc, p.upper_bound, 1e-11)
        } else {
            let mirrored = |x: f64| pdf(2.0 * p.loc - x);
            quad::integrate_below(&pdf, p.loc, 1e-11) + quad::integrate_below(&mirrored, p.loc, 1e-11)
        };
        assert!((total - 1.0).abs() < 1e-6, "{p:?}: total mass {total}");
    }
}

#[test]
fn density_matches_statrs() {
    let mut rng = stream_rng(405, 0);
    for _ in 0..1000 {
        let p = random_params(&mut rng);
        let x = if p.upper_bound.is_finite() { p.upper_bound - rng.random_range(0.0..10.0) } else { rng.random_range(-20.0..5.0) };
        let ours = p.ln_pdf(x).unwrap();
        let reference = statrs_ln_truncated_t(x, p.loc, p.scale, p.dof, p.upper_bound);
        assert!((ours - reference).abs() < 1e-9 * reference.abs().max(1.0), "{p:?} at {x}: {ours} vs {reference}");
    }
}

#[test]
fn sampler_matches_quadrature_cdf() {
    let cases = [tt(-5.0, 1.0, 10.0, 0.0), tt(-0.5, 0.3, 8.0, 0.2), tt(0.5, 0.4, 3.0, 0.0)];
    for (i, p) in cases.iter().enumerate() {
        let mut rng = stream_rng(31 + i as u64, 0);
        let mut xs: Vec<f64> = (0..1_000_000).map(|_| p.sample(&mut rng)).collect();
        assert!(xs.iter().all(|x| *x <= p.upper_bound));
        let d = ks_truncated_t(&mut xs, p.loc, p.scale, p.dof, p.upper_bound);
        assert!(d < 0.002, "{p:?}: KS distance {d}");
    }
}

#[test]
fn untruncated_moments() {
    let p = tt(-3.0, 1.5, 6.0, f64::INFINITY);
    let mut rng = stream_rng(77, 0);
    let n = 400_000;
    let xs: Vec<f64> = (0..n).map(|_| p.sample(&mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let expect_var = 1.5f64.powi(2) * 6.0 / 4.0;
    assert!((mean + 3.0).abs() < 0.02, "mean {mean}");
    assert!((var / expect_var - 1.0).abs() < 0.03, "variance {var} vs {expect_var}");
}
