use maint_core::dataset::{generate_dataset, BehaviorPolicy};
use maint_core::fixtures::theta_true;
use maint_core::sim::stream_rng;
use maint_core::Trajectory;
use maint_inference::{
    load_draws, run_mcmc, save_draws, EmissionMode, InferenceError, McmcConfig, PointKind, PosteriorDraws, PriorConfig,
    SamplerKind, SamplerStats,
};

fn dataset(seed: u64, n: usize, steps: usize) -> Vec<Trajectory> {
    generate_dataset(&theta_true(), n, steps, &BehaviorPolicy::default(), &mut stream_rng(seed, 0)).unwrap().trajectories
}

/// Closed-form Dirichlet posterior means of every row given hidden states.
fn conjugate_means(data: &[Trajectory], priors: &PriorConfig) -> (Vec<f64>, Vec<Vec<Vec<f64>>>) {
    let mut a0 = priors.alpha0.clone();
    let mut at = priors.alpha_t.clone();
    for t in data {
        let h = t.hidden_states.as_ref().unwrap();
        a0[h[0].0] += 1.0;
        for (i, a) in t.actions.iter().enumerate() {
            at[a.0][h[i].0][h[i + 1].0] += 1.0;
        }
    }
    let norm = |v: &Vec<f64>| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    (norm(&a0), at.iter().map(|rows| rows.iter().map(norm).collect()).collect())
}

fn max_row_error(draws: &PosteriorDraws, data: &[Trajectory], priors: &PriorConfig) -> f64 {
    let (m0, mt) = conjugate_means(data, priors);
    let mean = draws.point(PointKind::Mean).unwrap();
    let mut worst: f64 = 0.0;
    for (a, b) in mean.transition.initial.iter().zip(&m0) {
        worst = worst.max((a - b).abs());
    }
    for (rows, expect) in mean.transition.kernel.iter().zip(&mt) {
        for (row, e) in rows.iter().zip(expect) {
            for (a, b) in row.iter().zip(e) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

#[test]
fn conjugate_rows_match_closed_form() {
    let data = dataset(501, 62, 20);
    let priors = PriorConfig::structured(theta_true().dims());
    let config = McmcConfig { warmup: 500, samples: 1000, ..McmcConfig::default() };
    let (draws, diag) = run_mcmc(&data, &priors, EmissionMode::Disabled, &config, 11).unwrap();
    let worst = max_row_error(&draws, &data, &priors);
    assert!(worst < 0.01, "max deviation {worst}");
    assert!(diag.max_rhat.unwrap() < 1.05);
    assert!(matches!(diag.sampler, Some(SamplerStats::Nuts { divergences: 0, .. })));
}

#[test]
fn random_walk_fallback_targets_the_same_posterior() {
    let data = dataset(502, 62, 20);
    let priors = PriorConfig::structured(theta_true().dims());
    let config = McmcConfig { warmup: 20_000, samples: 20_000, sampler: SamplerKind::RandomWalk, ..McmcConfig::default() };
    let (draws, diag) = run_mcmc(&data, &priors, EmissionMode::Disabled, &config, 12).unwrap();
    let worst = max_row_error(&draws, &data, &priors);
    assert!(worst < 0.05, "max deviation {worst}");
    match diag.sampler {
        Some(SamplerStats::RandomWalk { acceptance_rate }) => assert!((0.1..0.45).contains(&acceptance_rate), "{acceptance_rate}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn same_seed_gives_identical_draws() {
    let data = dataset(503, 4, 8);
    let priors = PriorConfig::structured(theta_true().dims());
    let config = McmcConfig { chains: 2, warmup: 40, samples: 20, ..McmcConfig::default() };
    let (a, _) = run_mcmc(&data, &priors, EmissionMode::Full, &config, 5).unwrap();
    let (b, _) = run_mcmc(&data, &priors, EmissionMode::Full, &config, 5).unwrap();
    assert_eq!(a, b);
    let (c, _) = run_mcmc(&data, &priors, EmissionMode::Full, &config, 6).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn stored_draws_round_trip_byte_for_byte() {
    let data = dataset(504, 4, 8);
    let priors = PriorConfig::structured(theta_true().dims());
    let config = McmcConfig { chains: 2, warmup: 30, samples: 10, ..McmcConfig::default() };
    let (draws, _) = run_mcmc(&data, &priors, EmissionMode::Full, &config, 7).unwrap();
    assert_eq!(draws.header.unconstrained_dim, 77);
    assert_eq!(draws.header.prior_fingerprint, priors.fingerprint());
    assert_eq!(draws.label_swaps(), 0);
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    save_draws(&draws, &p1).unwrap();
    let loaded = load_draws(&p1).unwrap();
    assert_eq!(loaded, draws);
    save_draws(&loaded, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    for theta in loaded.all_params().unwrap() {
        theta.validate().unwrap();
    }
}

#[test]
fn empty_dataset_is_rejected() {
    let priors = PriorConfig::structured(theta_true().dims());
    let r = run_mcmc(&[], &priors, EmissionMode::Full, &McmcConfig::desk(), 1);
    assert!(matches!(r, Err(InferenceError::EmptyDataset)));
}

#[test]
fn widespread_divergence_is_an_error() {
    let data = dataset(505, 3, 5);
    let priors = PriorConfig::structured(theta_true().dims());
    let mut config = McmcConfig { chains: 2, warmup: 20, samples: 20, ..McmcConfig::default() };
    config.nuts.max_delta_h = -1.0;
    let err = run_mcmc(&data, &priors, EmissionMode::Full, &config, 2).unwrap_err();
    assert!(matches!(err, InferenceError::TooManyDivergences { .. }));
    assert!(err.to_string().contains("reparameteriz"));
}

#[test]
fn emissions_disabled_requires_hidden_states() {
    let mut data = dataset(506, 2, 5);
    data[1].hidden_states = None;
    let priors = PriorConfig::structured(theta_true().dims());
    assert!(run_mcmc(&data, &priors, EmissionMode::Disabled, &McmcConfig::desk(), 1).is_err());
}
