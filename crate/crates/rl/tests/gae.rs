use maint_core::stream_rng;
use maint_rl::{compute_gae, RolloutBuffer, StepRecord};
use rand::Rng;

/// `A_t = sum_l (gamma lambda)^l delta_{t+l}` within the episode, summed
/// directly rather than recursively.
fn direct_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let next = if t + 1 < n { values[t + 1] } else { 0.0 };
            rewards[t] + gamma * next - values[t]
        })
        .collect();
    (0..n).map(|t| (t..n).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum()).collect()
}

#[test]
fn matches_direct_sum_on_random_episodes() {
    let mut rng = stream_rng(12, 0);
    for trial in 0..20 {
        let lengths = [rng.random_range(1..30), rng.random_range(1..30), rng.random_range(1..30)];
        let gamma = rng.random_range(0.8..1.0);
        let lambda = rng.random_range(0.0..1.0);
        let mut buffer = RolloutBuffer::new(lengths.iter().sum());
        let mut expected = Vec::new();
        let mut expected_returns = Vec::new();
        for &len in &lengths {
            let rewards: Vec<f64> = (0..len).map(|_| rng.random_range(-5.0..1.0)).collect();
            let values: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..0.0)).collect();
            let adv = direct_gae(&rewards, &values, gamma, lambda);
            expected_returns.extend(adv.iter().zip(&values).map(|(a, v)| a + v));
            expected.extend(adv);
            let steps = (0..len)
                .map(|t| StepRecord { input: vec![1.0], action: 0, logp: 0.0, reward: rewards[t], value: values[t], done: t + 1 == len })
                .collect();
            buffer.push_episode(steps).unwrap();
        }
        let gae = compute_gae(&buffer, gamma, lambda).unwrap();
        for (i, (a, e)) in gae.advantages.iter().zip(&expected).enumerate() {
            assert!((a - e).abs() < 1e-12, "trial {trial} step {i}: {a} vs {e}");
        }
        for (r, e) in gae.returns.iter().zip(&expected_returns) {
            assert!((r - e).abs() < 1e-12);
        }
    }
}

#[test]
fn td_and_monte_carlo_limits() {
    let rewards = [0.0, 0.0, 4.0, 0.0, 1.0];
    let mut buffer = RolloutBuffer::new(5);
    let steps = rewards
        .iter()
        .enumerate()
        .map(|(t, r)| StepRecord { input: vec![1.0], action: 0, logp: 0.0, reward: *r, value: 0.0, done: t == 4 })
        .collect();
    buffer.push_episode(steps).unwrap();
    let td = compute_gae(&buffer, 0.99, 0.0).unwrap();
    assert_eq!(td.advantages, rewards.to_vec());
    let mc = compute_gae(&buffer, 1.0, 1.0).unwrap();
    assert_eq!(mc.advantages, vec![5.0, 5.0, 5.0, 1.0, 1.0]);
}
