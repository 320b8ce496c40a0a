use maint_core::fixtures::theta_true;
use maint_core::sim::EpisodeOptions;
use maint_core::{stream_rng, CostTable};
use maint_rl::ppo::gather;
use maint_rl::{
    collect_episode, compute_gae, normalize_advantages, policy_forward, ppo_loss, ppo_update, LossSpec, MlpParams,
    OptimizerKind, OptimizerState, PpoConfig, RlError, RolloutBuffer, StepRecord, TrainEnv,
};
use ndarray::Array2;
use rand::Rng;

fn small_config() -> PpoConfig {
    PpoConfig { rollout_steps: 500, minibatch: 100, epochs: 4, hidden: vec![32, 32], ..PpoConfig::default() }
}

fn filled_buffer(params: &MlpParams, config: &PpoConfig, seed: u64) -> RolloutBuffer {
    let env = TrainEnv::Fixed(theta_true());
    let costs = CostTable::railway();
    let mut buffer = RolloutBuffer::new(config.rollout_steps);
    for e in 0..(config.rollout_steps / 50) as u64 {
        let (steps, _) =
            collect_episode(params, &env, &costs, 50, EpisodeOptions::default(), config.reward_scale, seed, e).unwrap();
        buffer.push_episode(steps).unwrap();
    }
    buffer
}

#[test]
fn one_update_is_bit_reproducible() {
    let config = small_config();
    let init = MlpParams::init(4, &config.hidden, 3, &mut stream_rng(1, 0));
    let run = || {
        let mut p = init.clone();
        let mut opt = OptimizerState::new(p.len());
        let mut buffer = filled_buffer(&init, &config, 4);
        let stats = ppo_update(&mut p, &mut opt, &mut buffer, &config, &mut stream_rng(9, 0)).unwrap();
        assert!(buffer.is_empty());
        (p, opt, stats)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    assert_ne!(a.0, init);
}

#[test]
fn stored_log_probabilities_give_unit_ratios() {
    let config = small_config();
    let p = MlpParams::init(4, &config.hidden, 3, &mut stream_rng(2, 0));
    let buffer = filled_buffer(&p, &config, 6);
    assert!(buffer.episode_lengths().iter().all(|l| *l == 50));
    let gae = compute_gae(&buffer, config.gamma, config.gae_lambda).unwrap();
    let idx: Vec<usize> = (0..buffer.len()).collect();
    let batch = gather(&buffer, &idx, &gae.advantages, &gae.returns);
    let cache = p.forward_batch(batch.inputs.view()).unwrap();
    for i in 0..batch.len() {
        let lp = maint_rl::mlp::log_softmax(cache.logits.row(i));
        assert!((lp[batch.actions[i]] - batch.old_logp[i]).abs() < 1e-12);
    }
    let stats = ppo_loss(&p, &batch, LossSpec::from(&config)).unwrap();
    assert_eq!(stats.clip_fraction, 0.0);
    assert!(stats.approx_kl.abs() < 1e-12);
}

#[test]
fn unbounded_clip_one_epoch_follows_vanilla_policy_gradient() {
    let config = PpoConfig {
        clip: f64::INFINITY,
        epochs: 1,
        value_coeff: 0.0,
        entropy_coeff: 0.0,
        max_grad_norm: f64::INFINITY,
        optimizer: OptimizerKind::Sgd,
        learning_rate: 1e-4,
        ..small_config()
    };
    let init = MlpParams::init(4, &config.hidden, 3, &mut stream_rng(3, 0));
    let mut buffer = filled_buffer(&init, &config, 8);

    // vanilla policy gradient: -mean(A * grad log pi(a|y)), via the log-prob
    // partials (onehot - pi) only
    let gae = compute_gae(&buffer, config.gamma, config.gae_lambda).unwrap();
    let mut adv = gae.advantages.clone();
    normalize_advantages(&mut adv);
    let n = buffer.len();
    let mut inputs = Array2::zeros((n, 4));
    let mut dlogits = Array2::zeros((n, 3));
    for (i, r) in buffer.records.iter().enumerate() {
        for j in 0..4 {
            inputs[[i, j]] = r.input[j];
        }
        let (logp, _) = policy_forward(&init, &r.input).unwrap();
        for j in 0..3 {
            let onehot = if j == r.action { 1.0 } else { 0.0 };
            dlogits[[i, j]] = -adv[i] * (onehot - logp[j].exp()) / n as f64;
        }
    }
    let cache = init.forward_batch(inputs.view()).unwrap();
    let pg = init.backward(&cache, dlogits.view(), ndarray::Array1::zeros(n).view());

    let mut p = init.clone();
    let mut opt = OptimizerState::new(p.len());
    ppo_update(&mut p, &mut opt, &mut buffer, &config, &mut stream_rng(4, 0)).unwrap();
    let step: Vec<f64> = p.data.iter().zip(&init.data).map(|(a, b)| a - b).collect();
    let dot: f64 = step.iter().zip(&pg.data).map(|(s, g)| -s * g).sum();
    let ns = step.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cosine = dot / (ns * pg.norm());
    assert!(cosine > 0.999, "cosine {cosine}");
}

#[test]
fn bandit_learns_the_rewarded_action() {
    // single state, three actions, reward +1 for action 1
    let config = PpoConfig { rollout_steps: 500, minibatch: 100, hidden: vec![16, 16], ..PpoConfig::default() };
    let mut p = MlpParams::init(1, &config.hidden, 3, &mut stream_rng(5, 0));
    let mut opt = OptimizerState::new(p.len());
    let mut rng = stream_rng(6, 0);
    let mut greedy_prob = 0.0;
    let mut reached = None;
    for u in 0..50 {
        let mut buffer = RolloutBuffer::new(config.rollout_steps);
        for _ in 0..config.rollout_steps {
            let (logp, value) = policy_forward(&p, &[1.0]).unwrap();
            let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            let a = maint_rl::policy::sample_action(&probs, &mut rng);
            let reward = if a == 1 { 1.0 } else { 0.0 };
            buffer.push(StepRecord { input: vec![1.0], action: a, logp: logp[a], reward, value, done: true }).unwrap();
        }
        ppo_update(&mut p, &mut opt, &mut buffer, &config, &mut rng).unwrap();
        greedy_prob = policy_forward(&p, &[1.0]).unwrap().0[1].exp();
        if greedy_prob > 0.9 {
            reached = Some(u + 1);
            break;
        }
    }
    assert!(reached.is_some(), "probability of the rewarded action after 50 updates: {greedy_prob}");
}

#[test]
fn non_finite_loss_aborts_with_fingerprint() {
    let config = small_config();
    let init = MlpParams::init(4, &config.hidden, 3, &mut stream_rng(7, 0));
    let mut buffer = filled_buffer(&init, &config, 2);
    let k = stream_rng(1, 1).random_range(0..buffer.len());
    buffer.records[k].value = f64::NAN;
    let mut p = init.clone();
    let mut opt = OptimizerState::new(p.len());
    match ppo_update(&mut p, &mut opt, &mut buffer, &config, &mut stream_rng(1, 0)) {
        Err(RlError::NonFiniteLoss { fingerprint }) => assert_eq!(fingerprint.len(), 16),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn partial_buffer_is_refused() {
    let config = small_config();
    let mut p = MlpParams::init(4, &config.hidden, 3, &mut stream_rng(7, 0));
    let mut opt = OptimizerState::new(p.len());
    let mut buffer = RolloutBuffer::new(config.rollout_steps);
    buffer.push(StepRecord { input: vec![0.25; 4], action: 0, logp: -1.0, reward: 0.0, value: 0.0, done: true }).unwrap();
    assert!(ppo_update(&mut p, &mut opt, &mut buffer, &config, &mut stream_rng(1, 0)).is_err());
}
