use maint_core::dataset::{generate_dataset, BehaviorPolicy};
use maint_core::eval::{evaluate_policy, evaluate_policy_with, EvalOptions, ParamSource};
use maint_core::fixtures::theta_true;
use maint_core::sim::{simulate_episode, stream_rng, ConstantPolicy, RandomPolicy};
use maint_core::{backward_induction, ActionIndex, CostTable, OptimalMdpPolicy, QmdpPolicy};

#[test]
fn do_nothing_transition_counts_converge() {
    let theta = theta_true();
    let mut rng = stream_rng(10, 0);
    let ds = generate_dataset(&theta, 10_000, 20, &ConstantPolicy(ActionIndex(0)), &mut rng).unwrap();
    let mut counts = vec![vec![0usize; 4]; 4];
    for t in &ds.trajectories {
        let h = t.hidden_states.as_ref().unwrap();
        for w in h.windows(2) {
            counts[w[0].0][w[1].0] += 1;
        }
    }
    for s in 0..4 {
        let total: usize = counts[s].iter().sum();
        assert!(total > 1000, "state {s} visited {total} times");
        for n in 0..4 {
            let freq = counts[s][n] as f64 / total as f64;
            let p = theta.transition.kernel[0][s][n];
            assert!((freq - p).abs() < 0.01, "row {s} col {n}: {freq} vs {p}");
        }
    }
}

#[test]
fn behavior_data_is_non_positive() {
    let mut rng = stream_rng(11, 0);
    let ds = generate_dataset(&theta_true(), 500, 20, &BehaviorPolicy::default(), &mut rng).unwrap();
    assert!(ds.trajectories.iter().flat_map(|t| &t.observations).all(|z| *z <= 0.0));
}

#[test]
fn evaluation_equals_sequential_rollouts() {
    let theta = theta_true();
    let costs = CostTable::railway();
    let policy = RandomPolicy { actions: 3 };
    let opts = EvalOptions { keep_totals: true, ..Default::default() };
    let stats = evaluate_policy_with(&policy, ParamSource::Fixed(&theta), &costs, 50, 300, 99, opts).unwrap();
    let totals = stats.totals.unwrap();
    for (i, total) in totals.iter().enumerate() {
        let mut rng = stream_rng(99, i as u64);
        let rec = simulate_episode(&theta, &policy, &costs, 50, &mut rng).unwrap();
        assert_eq!(rec.total_cost.to_bits(), total.to_bits());
        assert_eq!(rec.step_costs.iter().sum::<f64>(), rec.total_cost);
    }
}

#[test]
fn benchmark_ordering_on_fixture() {
    let theta = theta_true();
    let costs = CostTable::railway();
    let qt = backward_induction(&theta, &costs, 50, 1.0).unwrap();
    let n = 4000;
    let src = ParamSource::Fixed(&theta);
    let mdp = evaluate_policy(&OptimalMdpPolicy(qt.clone()), src, &costs, 50, n, 1).unwrap();
    let qmdp = evaluate_policy(&QmdpPolicy(qt.clone()), src, &costs, 50, n, 1).unwrap();
    let random = evaluate_policy(&RandomPolicy { actions: 3 }, src, &costs, 50, n, 1).unwrap();
    assert!(mdp.mean - qmdp.mean > -3.0 * mdp.combined_se(&qmdp), "{mdp:?} {qmdp:?}");
    assert!(qmdp.mean - random.mean > 3.0 * qmdp.combined_se(&random), "{qmdp:?} {random:?}");
    // the planner's value at t = 0 is the expected total under T0
    let v0: f64 = (0..4).map(|s| 0.25 * qt.value(0, maint_core::StateIndex(s))).sum();
    assert!((mdp.mean - v0).abs() < 4.0 * mdp.se, "{} vs {v0}", mdp.mean);
}

#[test]
fn posterior_draw_source_is_reproducible() {
    let mut a = theta_true();
    a.transition.kernel[0][0] = vec![0.6, 0.4, 0.0, 0.0];
    let draws = vec![theta_true(), a];
    let costs = CostTable::railway();
    let run = || evaluate_policy(&RandomPolicy { actions: 3 }, ParamSource::Draws(&draws), &costs, 50, 200, 4).unwrap();
    assert_eq!(run(), run());
}
