//! The training loop: collect belief-input rollouts, update every `K`
//! steps, evaluate greedily every few updates and keep the best network.

use std::path::PathBuf;
use std::time::Instant;

use maint_core::sim::EpisodeOptions;
use maint_core::{
    evaluate_policy_with, param_seed, stream_rng, CostTable, Dims, EvalOptions, Episode, ParamSource, PomdpParams,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::buffer::{RolloutBuffer, StepRecord};
use crate::checkpoint::Checkpoint;
use crate::error::{Result, RlError};
use crate::mlp::MlpParams;
use crate::policy::{policy_forward, sample_action, PpoPolicy};
use crate::ppo::{ppo_update, OptimizerState, PpoConfig, UpdateStats};

const UPDATE_SALT: u64 = 0x6A09_E667_F3BC_C909;
const EVAL_SALT: u64 = 0xBB67_AE85_84CA_A73B;
const INIT_SALT: u64 = 0x3C6E_F372_FE94_F82B;

/// Environment parameters for training episodes.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainEnv {
    /// One model (posterior mean) for every episode.
    Fixed(PomdpParams),
    /// A model drawn per episode from posterior draws (domain randomization).
    Randomized(Vec<PomdpParams>),
}

impl TrainEnv {
    pub fn source(&self) -> ParamSource<'_> {
        match self {
            TrainEnv::Fixed(p) => ParamSource::Fixed(p),
            TrainEnv::Randomized(d) => ParamSource::Draws(d),
        }
    }

    pub fn dims(&self) -> Option<Dims> {
        match self {
            TrainEnv::Fixed(p) => Some(p.dims()),
            TrainEnv::Randomized(d) => d.first().map(|p| p.dims()),
        }
    }

    pub fn mode(&self) -> &'static str {
        match self {
            TrainEnv::Fixed(_) => "fixed",
            TrainEnv::Randomized(_) => "domain_randomized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub total_steps: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Evaluate with the argmax action instead of sampling.
    pub greedy_eval: bool,
    pub condition_on_z0: bool,
    /// Where to write the best network whenever it improves.
    #[serde(skip)]
    pub checkpoint: Option<PathBuf>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            total_steps: 5_000_000,
            eval_every: 5,
            eval_episodes: 500,
            greedy_eval: true,
            condition_on_z0: false,
            checkpoint: None,
        }
    }
}

impl Schedule {
    /// Scaled-down run used for desk experiments.
    pub fn desk() -> Self {
        Self { total_steps: 200_000, ..Self::default() }
    }

    pub fn updates(&self, ppo: &PpoConfig) -> usize {
        self.total_steps / ppo.rollout_steps
    }

    pub fn evaluation_iterations(&self, ppo: &PpoConfig) -> usize {
        self.updates(ppo) / self.eval_every
    }

    pub fn validate(&self, ppo: &PpoConfig) -> Result<()> {
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(RlError::Config("evaluation interval and episode count must be positive".into()));
        }
        if self.total_steps < ppo.rollout_steps || self.total_steps % ppo.rollout_steps != 0 {
            return Err(RlError::Config(format!(
                "total steps {} must be a positive multiple of the rollout size {}",
                self.total_steps, ppo.rollout_steps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// 1-based evaluation iteration.
    pub iteration: usize,
    pub updates: usize,
    pub steps: usize,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub mode: String,
    pub seed: u64,
    pub config_fingerprint: String,
    pub evaluations: Vec<EvalPoint>,
    pub best: Option<EvalPoint>,
    pub best_checkpoint: Option<PathBuf>,
    pub updates: Vec<UpdateStats>,
    pub runtime_secs: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Network with the best evaluation mean (the final one if no evaluation ran).
    pub best: MlpParams,
    pub last: MlpParams,
}

/// Hex digest of the PPO configuration, schedule and horizon.
pub fn config_fingerprint(ppo: &PpoConfig, schedule: &Schedule, horizon: usize) -> String {
    let json = serde_json::json!({ "ppo": ppo, "schedule": schedule, "horizon": horizon });
    hex::encode(Sha256::digest(json.to_string().as_bytes()))
}

/// Roll out episode `index` with the sampling policy; the model is picked
/// from its own stream so identical draws reproduce the fixed setting.
pub fn collect_episode(
    params: &MlpParams,
    env: &TrainEnv,
    costs: &CostTable,
    horizon: usize,
    options: EpisodeOptions,
    reward_scale: f64,
    seed: u64,
    index: u64,
) -> Result<(Vec<StepRecord>, f64)> {
    let theta = env.source().sample(&mut stream_rng(param_seed(seed), index)).clone();
    let mut rng = stream_rng(seed, index);
    let mut ep = Episode::start(theta, costs.clone(), horizon, options, &mut rng)?;
    let mut steps = Vec::with_capacity(horizon);
    while !ep.is_done() {
        let input = ep.belief().probs.clone();
        let (logp, value) = policy_forward(params, &input)?;
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let action = sample_action(&probs, &mut rng);
        let out = ep.step(maint_core::ActionIndex(action), &mut rng)?;
        steps.push(StepRecord { input, action, logp: logp[action], reward: out.cost * reward_scale, value, done: out.done });
    }
    Ok((steps, ep.total_cost()))
}

/// Train a belief-input policy.
pub fn train(
    env: &TrainEnv,
    costs: &CostTable,
    horizon: usize,
    ppo: &PpoConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    ppo.validate(horizon)?;
    schedule.validate(ppo)?;
    env.source().validate()?;
    let dims = env.dims().ok_or_else(|| RlError::Config("no environment parameters".into()))?;
    if dims != costs.dims() {
        return Err(RlError::Dimension(format!("environment is {dims:?} but the cost table is {:?}", costs.dims())));
    }
    costs.validate()?;

    let fingerprint = config_fingerprint(ppo, schedule, horizon);
    let mut params = MlpParams::init(dims.states, &ppo.hidden, dims.actions, &mut stream_rng(seed ^ INIT_SALT, 0));
    let mut opt = OptimizerState::new(params.len());
    let mut buffer = RolloutBuffer::new(ppo.rollout_steps);
    let options = EpisodeOptions { condition_on_z0: schedule.condition_on_z0 };
    let per_update = (ppo.rollout_steps / horizon) as u64;
    let mut report = TrainReport {
        mode: env.mode().into(),
        seed,
        config_fingerprint: fingerprint.clone(),
        evaluations: Vec::new(),
        best: None,
        best_checkpoint: None,
        updates: Vec::new(),
        runtime_secs: 0.0,
    };
    let mut best = params.clone();

    for u in 0..schedule.updates(ppo) {
        let episodes: Vec<Vec<StepRecord>> = (0..per_update)
            .into_par_iter()
            .map(|j| {
                collect_episode(&params, env, costs, horizon, options, ppo.reward_scale, seed, u as u64 * per_update + j)
                    .map(|(s, _)| s)
            })
            .collect::<Result<_>>()?;
        for e in episodes {
            buffer.push_episode(e)?;
        }
        let stats = ppo_update(&mut params, &mut opt, &mut buffer, ppo, &mut stream_rng(seed ^ UPDATE_SALT, u as u64))?;
        report.updates.push(stats);

        if (u + 1) % schedule.eval_every == 0 {
            let iteration = (u + 1) / schedule.eval_every;
            let policy = PpoPolicy { params: params.clone(), greedy: schedule.greedy_eval };
            let eval_seed = (seed ^ EVAL_SALT).wrapping_add(iteration as u64 * schedule.eval_episodes as u64);
            let ev = evaluate_policy_with(
                &policy,
                env.source(),
                costs,
                horizon,
                schedule.eval_episodes,
                eval_seed,
                EvalOptions { episode: options, keep_totals: false },
            )?;
            let point = EvalPoint { iteration, updates: u + 1, steps: (u + 1) * ppo.rollout_steps, mean: ev.mean, se: ev.se };
            report.evaluations.push(point);
            if report.best.is_none_or(|b| point.mean > b.mean) {
                report.best = Some(point);
                best = params.clone();
                if let Some(path) = &schedule.checkpoint {
                    Checkpoint::new(best.clone(), dims.states, fingerprint.clone(), iteration, ev.mean, ev.se).save(path)?;
                    report.best_checkpoint = Some(path.clone());
                }
            }
        }
    }
    if report.best.is_none() {
        best = params.clone();
    }
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(TrainOutcome { report, best, last: params })
}
