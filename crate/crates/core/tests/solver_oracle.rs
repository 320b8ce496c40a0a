use maint_core::fixtures::theta_true;
use maint_core::sim::stream_rng;
use maint_core::{backward_induction, optimal_mdp_action, ActionIndex, CostTable, StateIndex};
use maint_testkit::{policy_tree_values, random_costs, random_params};

#[test]
fn matches_policy_tree_enumeration() {
    let mut rng = stream_rng(2024, 0);
    let h = 3;
    for _ in 0..100 {
        let theta = random_params(&mut rng, 2, 2);
        let costs = random_costs(&mut rng, 2, 2);
        let qt = backward_induction(&theta, &costs, h, 1.0).unwrap();
        // q[t] with H decisions equals q[0] of the (H - t)-step problem
        for t in 0..h {
            let oracle = policy_tree_values(&theta, &costs, h - t);
            for s in 0..2 {
                for a in 0..2 {
                    let (x, y) = (qt.q[t][s][a], oracle[s][a]);
                    assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "t={t} s={s} a={a}: {x} vs {y}");
                }
            }
        }
    }
}

#[test]
fn worst_state_renewal_crossover() {
    // s3 at t = 0: renewal a2 becomes optimal once enough horizon remains to
    // recoup its cost; the oracle fixes where that happens.
    let theta = theta_true();
    let costs = CostTable::railway();
    let mut crossover = None;
    for h in 1..=6 {
        let oracle = expectimax_from_worst(&theta, &costs, h);
        let qt = backward_induction(&theta, &costs, h, 1.0).unwrap();
        let expect = if oracle[2] > oracle[0].max(oracle[1]) { ActionIndex(2) } else if oracle[1] > oracle[0] { ActionIndex(1) } else { ActionIndex(0) };
        let got = optimal_mdp_action(&qt, StateIndex(3), 0);
        assert_eq!(got, expect, "horizon {h}");
        for a in 0..3 {
            assert!((qt.q[0][3][a] - oracle[a]).abs() < 1e-9 * oracle[a].abs().max(1.0));
        }
        if got == ActionIndex(2) && crossover.is_none() {
            crossover = Some(h);
        }
    }
    let c = crossover.expect("renewal optimal for some horizon up to 6");
    for h in c..=50 {
        let qt = backward_induction(&theta, &costs, h, 1.0).unwrap();
        assert_eq!(optimal_mdp_action(&qt, StateIndex(3), 0), ActionIndex(2), "horizon {h}");
    }
}

/// `v[a]` for start state s3 with the first action forced, by plain
/// expectimax over the state tree (the fixture is too large for policy trees).
fn expectimax_from_worst(theta: &maint_core::PomdpParams, costs: &CostTable, h: usize) -> Vec<f64> {
    fn best(theta: &maint_core::PomdpParams, costs: &CostTable, s: usize, left: usize) -> f64 {
        (0..3).map(|a| forced(theta, costs, s, a, left)).fold(f64::NEG_INFINITY, f64::max)
    }
    fn forced(theta: &maint_core::PomdpParams, costs: &CostTable, s: usize, a: usize, left: usize) -> f64 {
        let r = costs.action_cost[a][s] + costs.condition_cost[s];
        if left == 1 {
            return r;
        }
        let row = &theta.transition.kernel[a][s];
        r + (0..4).filter(|n| row[*n] > 0.0).map(|n| row[n] * best(theta, costs, n, left - 1)).sum::<f64>()
    }
    (0..3).map(|a| forced(theta, costs, 3, a, h)).collect()
}
