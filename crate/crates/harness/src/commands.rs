//! The pipeline stages behind each CLI command.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use maint_core::dataset::{generate_dataset, read_trajectories, trajectories_to_jsonl};
use maint_core::sim::{simulate_episode_with, EpisodeOptions, RandomPolicy};
use maint_core::{
    backward_induction, evaluate_policy_with, param_seed, stream_rng, CostTable, EvalOptions, OptimalMdpPolicy,
    ParamSource, Policy, PomdpParams, QTable, QmdpPolicy,
};
use maint_inference::{load_draws, posterior_point, run_mcmc, Diagnostics, PosteriorDraws};
use maint_rl::{config_fingerprint, train, Checkpoint, PpoPolicy, TrainEnv, TrainReport};
use maint_service::Artifacts;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifact::{
    append_result, check_lineage, check_overwrite, digest, meta_path, read_meta, require, write_artifact, write_meta, ArtifactMeta,
    SCHEMA_VERSION,
};
use crate::config::{dims_mismatch, Environment, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::table::{ResultTable, TableRow};

/// Configuration plus the global command-line switches.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub config: ExperimentConfig,
    /// Proceed when consumed artifacts disagree on their lineage.
    pub allow_mixed: bool,
    /// Replace artifacts produced under another fingerprint.
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    OptimalMdp,
    Qmdp,
    BeliefPpo,
    BeliefPpoDr,
    Random,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::OptimalMdp, Method::Qmdp, Method::BeliefPpo, Method::BeliefPpoDr, Method::Random];

    pub fn label(self) -> &'static str {
        match self {
            Method::OptimalMdp => "optimal-MDP",
            Method::Qmdp => "QMDP",
            Method::BeliefPpo => "belief-PPO",
            Method::BeliefPpoDr => "belief-PPO-DR",
            Method::Random => "random",
        }
    }

    fn checkpoint(self) -> Option<bool> {
        match self {
            Method::BeliefPpo => Some(false),
            Method::BeliefPpoDr => Some(true),
            _ => None,
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("value serializes")
}

fn lineage(entries: &[(&str, &ArtifactMeta)]) -> BTreeMap<String, String> {
    entries.iter().map(|(k, m)| (k.to_string(), m.fingerprint.clone())).collect()
}

/// Metadata of the dataset when it is present on disk.
fn optional_meta(path: &Path) -> Option<ArtifactMeta> {
    if path.exists() && meta_path(path).exists() {
        read_meta(path).ok()
    } else {
        None
    }
}

pub fn cmd_generate(ctx: &Context) -> Result<ArtifactMeta> {
    let c = &ctx.config;
    c.validate()?;
    let truth = c.truth()?;
    let seed = c.seeds.generate;
    let stage = json!({ "truth": to_value(&truth), "generate": to_value(&c.generate) });
    let path = c.data_path();
    let mut meta = ArtifactMeta::new("dataset", seed, stage, BTreeMap::new());
    check_overwrite(&path, &meta, ctx.force)?;
    let ds = generate_dataset(&truth, c.generate.series, c.generate.steps, &c.generate.behavior, &mut stream_rng(seed, 0))?;
    for w in &ds.meta.warnings {
        tracing::warn!("{w}");
    }
    meta = meta.with_summary(json!({
        "series": c.generate.series,
        "steps": c.generate.steps,
        "action_counts": ds.meta.action_counts,
        "warnings": ds.meta.warnings,
    }));
    write_artifact(&path, trajectories_to_jsonl(&ds.trajectories).as_bytes(), &meta)?;
    Ok(meta)
}

#[derive(Debug, Clone)]
pub struct InferOutcome {
    pub meta: ArtifactMeta,
    pub draws: PosteriorDraws,
    pub diagnostics: Diagnostics,
    pub label_swaps: usize,
}

pub fn diagnostics_path(posterior: &Path) -> PathBuf {
    posterior.with_extension("diagnostics.json")
}

pub fn cmd_infer(ctx: &Context) -> Result<InferOutcome> {
    let c = &ctx.config;
    c.validate()?;
    let data_path = c.data_path();
    let data_meta = require(&data_path, "dataset", "generate")?;
    let data = read_trajectories(&data_path)?;
    let priors = c.priors()?;
    let seed = c.seeds.infer;
    let stage = json!({
        "mcmc": to_value(&c.infer.mcmc),
        "emissions": to_value(&c.infer.emissions),
        "priors": priors.fingerprint(),
    });
    let path = c.posterior_path();
    let meta = ArtifactMeta::new("posterior", seed, stage, lineage(&[("dataset", &data_meta)]));
    check_overwrite(&path, &meta, ctx.force)?;
    let (draws, diagnostics) = run_mcmc(&data, &priors, c.infer.emissions, &c.infer.mcmc, seed)?;
    let label_swaps = draws.label_swaps();
    let meta = meta.with_summary(json!({
        "draws": draws.len(),
        "max_rhat": diagnostics.max_rhat,
        "min_ess": diagnostics.min_ess,
        "label_swaps": label_swaps,
    }));
    write_artifact(&path, draws.to_jsonl().as_bytes(), &meta)?;
    let mut text = serde_json::to_string_pretty(&diagnostics)?;
    text.push('\n');
    fs::write(diagnostics_path(&path), text)?;
    Ok(InferOutcome { meta, draws, diagnostics, label_swaps })
}

/// The posterior artifact with its point estimate.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub meta: ArtifactMeta,
    pub draws: Vec<PomdpParams>,
    pub point: PomdpParams,
}

pub fn load_posterior(ctx: &Context) -> Result<Posterior> {
    let c = &ctx.config;
    let path = c.posterior_path();
    let meta = require(&path, "posterior", "infer")?;
    let raw = load_draws(&path)?;
    if raw.dims() != c.model.dims() {
        return Err(dims_mismatch("posterior", raw.dims(), c.model.dims()));
    }
    let mut consumed = vec![("posterior", &meta)];
    let data_meta = optional_meta(&c.data_path());
    if let Some(d) = &data_meta {
        consumed.push(("dataset", d));
    }
    for w in check_lineage(&consumed, ctx.allow_mixed)? {
        tracing::warn!("{w}");
    }
    let point = posterior_point(&raw, c.infer.point)?;
    Ok(Posterior { draws: raw.all_params()?, point, meta })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub meta: ArtifactMeta,
    pub checkpoint: Checkpoint,
    pub report: TrainReport,
}

pub fn cmd_train(ctx: &Context, dr: bool) -> Result<TrainSummary> {
    let c = &ctx.config;
    c.validate()?;
    let post = load_posterior(ctx)?;
    let seed = c.seeds.train;
    let h = c.model.horizon;
    let rl_fingerprint = config_fingerprint(&c.ppo, &c.schedule, h);
    let stage = json!({
        "domain_randomized": dr,
        "point": to_value(&c.infer.point),
        "ppo": to_value(&c.ppo),
        "schedule": to_value(&c.schedule),
        "horizon": h,
        "costs": to_value(&c.model.costs),
        "rl_fingerprint": rl_fingerprint,
    });
    let path = c.checkpoint_path(dr);
    let meta = ArtifactMeta::new("checkpoint", seed, stage, lineage(&[("posterior", &post.meta)]));
    check_overwrite(&path, &meta, ctx.force)?;
    let env = if dr { TrainEnv::Randomized(post.draws) } else { TrainEnv::Fixed(post.point) };
    let mut schedule = c.schedule.clone();
    schedule.checkpoint = None;
    let outcome = train(&env, &c.model.costs, h, &c.ppo, &schedule, seed)?;
    let report = outcome.report;
    let (iteration, mean, se) = report.best.map(|b| (b.iteration, b.mean, b.se)).unwrap_or((0, 0.0, 0.0));
    let checkpoint = Checkpoint::new(outcome.best, c.model.states, report.config_fingerprint.clone(), iteration, mean, se);
    let meta = meta.with_summary(json!({ "mode": report.mode, "best": report.best, "updates": report.updates.len() }));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let _ = fs::remove_file(meta_path(&path));
    checkpoint.save(&path)?;
    write_meta(&path, &meta)?;
    let report_path = c.report_path(dr);
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    let report_meta = ArtifactMeta::new("train_report", seed, json!({}), lineage(&[("checkpoint", &meta)]));
    write_artifact(&report_path, text.as_bytes(), &report_meta)?;
    Ok(TrainSummary { meta, checkpoint, report })
}

/// Everything needed to run a policy in the configured environment.
pub struct EvalSetup {
    pub costs: CostTable,
    pub horizon: usize,
    pub environment: Environment,
    pub options: EvalOptions,
    pub greedy: bool,
    pub posterior: Posterior,
    pub truth: Option<PomdpParams>,
    pub qtable: QTable,
    lineage: BTreeMap<String, String>,
    checkpoints: BTreeMap<bool, (ArtifactMeta, Checkpoint)>,
}

impl EvalSetup {
    pub fn new(ctx: &Context, environment: Environment, methods: &[Method]) -> Result<Self> {
        let c = &ctx.config;
        c.validate()?;
        let posterior = load_posterior(ctx)?;
        let truth = match environment {
            Environment::Truth => Some(c.truth()?),
            _ => None,
        };
        let mut checkpoints = BTreeMap::new();
        for dr in methods.iter().filter_map(|m| m.checkpoint()) {
            let path = c.checkpoint_path(dr);
            let producer = if dr { "train --dr" } else { "train" };
            let meta = require(&path, "checkpoint", producer)?;
            let ck = Checkpoint::load(&path)?;
            if (ck.states, ck.actions) != (c.model.states, c.model.actions) {
                return Err(dims_mismatch(
                    "checkpoint",
                    maint_core::Dims { states: ck.states, actions: ck.actions },
                    c.model.dims(),
                ));
            }
            checkpoints.insert(dr, (meta, ck));
        }
        let mut consumed: Vec<(&str, &ArtifactMeta)> = vec![("posterior", &posterior.meta)];
        for (dr, (meta, _)) in &checkpoints {
            consumed.push((if *dr { "checkpoint-dr" } else { "checkpoint" }, meta));
        }
        for w in check_lineage(&consumed, ctx.allow_mixed)? {
            tracing::warn!("{w}");
        }
        let lineage = lineage(&consumed);
        let qtable = backward_induction(&posterior.point, &c.model.costs, c.model.horizon, c.model.gamma)?;
        let options = EvalOptions {
            episode: EpisodeOptions { condition_on_z0: c.schedule.condition_on_z0 },
            keep_totals: false,
        };
        Ok(Self {
            costs: c.model.costs.clone(),
            horizon: c.model.horizon,
            environment,
            options,
            greedy: c.evaluate.greedy,
            posterior,
            truth,
            qtable,
            lineage,
            checkpoints,
        })
    }

    pub fn source(&self) -> ParamSource<'_> {
        match self.environment {
            Environment::Point => ParamSource::Fixed(&self.posterior.point),
            Environment::Posterior => ParamSource::Draws(&self.posterior.draws),
            Environment::Truth => ParamSource::Fixed(self.truth.as_ref().expect("truth loaded for this environment")),
        }
    }

    /// Benchmarks plan with the point estimate's Q-table whatever the environment.
    pub fn policy(&self, method: Method) -> Box<dyn Policy> {
        match method {
            Method::OptimalMdp => Box::new(OptimalMdpPolicy(self.qtable.clone())),
            Method::Qmdp => Box::new(QmdpPolicy(self.qtable.clone())),
            Method::Random => Box::new(RandomPolicy { actions: self.costs.dims().actions }),
            Method::BeliefPpo | Method::BeliefPpoDr => {
                let (_, ck) = &self.checkpoints[&method.checkpoint().expect("network method")];
                Box::new(PpoPolicy { params: ck.params.clone(), greedy: self.greedy })
            }
        }
    }

    pub fn fingerprint(&self, c: &ExperimentConfig, methods: &[Method], episodes: usize, seed: u64) -> String {
        digest(&json!({
            "methods": to_value(&methods),
            "environment": to_value(&self.environment),
            "episodes": episodes,
            "seed": seed,
            "greedy": self.greedy,
            "gamma": c.model.gamma,
            "horizon": self.horizon,
            "costs": to_value(&self.costs),
            "condition_on_z0": self.options.episode.condition_on_z0,
            "truth": self.truth.as_ref().map(to_value),
            "lineage": self.lineage,
        }))
    }

    pub fn evaluate(&self, method: Method, episodes: usize, seed: u64) -> Result<TableRow> {
        let policy = self.policy(method);
        let stats = evaluate_policy_with(&*policy, self.source(), &self.costs, self.horizon, episodes, seed, self.options)?;
        Ok(TableRow::new(method.label(), &stats))
    }

    /// Episode `index` of an evaluation run with `seed`, in full.
    pub fn trace(&self, method: Method, seed: u64, index: usize) -> Result<EpisodeTrace> {
        let source = self.source();
        let theta = source.sample(&mut stream_rng(param_seed(seed), index as u64));
        let draw_index = match source {
            ParamSource::Draws(d) => d.iter().position(|p| std::ptr::eq(p, theta)),
            ParamSource::Fixed(_) => None,
        };
        let policy = self.policy(method);
        let rec = simulate_episode_with(theta, &*policy, &self.costs, self.horizon, self.options.episode, &mut stream_rng(seed, index as u64))?;
        let t = rec.trajectory;
        Ok(EpisodeTrace {
            schema_version: SCHEMA_VERSION,
            method: method.label().into(),
            environment: self.environment,
            seed,
            episode: index,
            draw_index,
            observations: t.observations,
            beliefs: rec.beliefs.into_iter().map(|b| b.probs).collect(),
            hidden_states: t.hidden_states.unwrap_or_default().into_iter().map(|s| s.0).collect(),
            actions: t.actions.into_iter().map(|a| a.0).collect(),
            step_costs: rec.step_costs,
            total_cost: rec.total_cost,
        })
    }

    fn trace_meta(&self, c: &ExperimentConfig, method: Method, seed: u64, episodes: usize) -> ArtifactMeta {
        let stage = json!({ "method": to_value(&method), "episodes": episodes, "table": self.fingerprint(c, &[method], episodes, seed) });
        ArtifactMeta::new("trace", seed, stage, self.lineage.clone())
    }
}

/// One simulated episode with its hidden states, for rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub schema_version: u32,
    pub method: String,
    pub environment: Environment,
    pub seed: u64,
    pub episode: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draw_index: Option<usize>,
    pub observations: Vec<f64>,
    pub beliefs: Vec<Vec<f64>>,
    pub hidden_states: Vec<usize>,
    pub actions: Vec<usize>,
    pub step_costs: Vec<f64>,
    pub total_cost: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EvalRequest {
    pub environment: Option<Environment>,
    pub episodes: Option<usize>,
    pub seed: Option<u64>,
}

impl EvalRequest {
    fn resolve(&self, c: &ExperimentConfig) -> (Environment, usize, u64) {
        (
            self.environment.unwrap_or(c.evaluate.environment),
            self.episodes.unwrap_or(c.evaluate.episodes),
            self.seed.unwrap_or(c.seeds.evaluate),
        )
    }
}

fn run_table(ctx: &Context, command: &str, title: &str, methods: &[Method], req: &EvalRequest) -> Result<(ResultTable, EvalSetup)> {
    let c = &ctx.config;
    let (environment, episodes, seed) = req.resolve(c);
    if episodes < 1 {
        return Err(HarnessError::validation("need at least one evaluation episode"));
    }
    let setup = EvalSetup::new(ctx, environment, methods)?;
    let rows = methods.iter().map(|m| setup.evaluate(*m, episodes, seed)).collect::<Result<Vec<_>>>()?;
    let fingerprint = setup.fingerprint(c, methods, episodes, seed);
    let table = ResultTable::new(title, environment.label(), episodes, seed, fingerprint, rows);
    append_result(&c.results_dir(), command, &table.fingerprint, seed, to_value(&table))?;
    Ok((table, setup))
}

/// Evaluate one method; optionally dump the first `trace_episodes` episodes
/// as JSON lines to `trace`.
pub fn cmd_evaluate(ctx: &Context, method: Method, req: &EvalRequest, trace: Option<(&Path, usize)>) -> Result<ResultTable> {
    let (table, setup) = run_table(ctx, "evaluate", "Evaluation", &[method], req)?;
    if let Some((path, k)) = trace {
        let c = &ctx.config;
        let (_, episodes, seed) = req.resolve(c);
        let k = k.min(episodes);
        let mut out = String::new();
        for i in 0..k {
            out.push_str(&serde_json::to_string(&setup.trace(method, seed, i)?)?);
            out.push('\n');
        }
        let meta = setup.trace_meta(c, method, seed, k);
        check_overwrite(path, &meta, ctx.force)?;
        write_artifact(path, out.as_bytes(), &meta)?;
    }
    Ok(table)
}

/// One row per method, all evaluated on the same episode seeds.
pub fn cmd_compare(ctx: &Context, req: &EvalRequest) -> Result<ResultTable> {
    Ok(run_table(ctx, "compare", "Comparison", &Method::ALL, req)?.0)
}

/// Full trace of evaluation episode `episode`, written to `out` when given.
pub fn cmd_rollout(ctx: &Context, method: Method, req: &EvalRequest, episode: usize, out: Option<&Path>) -> Result<EpisodeTrace> {
    let c = &ctx.config;
    let (environment, _, seed) = req.resolve(c);
    let setup = EvalSetup::new(ctx, environment, &[method])?;
    let trace = setup.trace(method, seed, episode)?;
    if let Some(path) = out {
        let meta = setup.trace_meta(c, method, seed, 1);
        check_overwrite(path, &meta, ctx.force)?;
        let mut text = serde_json::to_string_pretty(&trace)?;
        text.push('\n');
        write_artifact(path, text.as_bytes(), &meta)?;
    }
    Ok(trace)
}

/// Artifacts served over HTTP: the point estimate, the posterior, the
/// data-generating model and whichever networks exist.
pub fn serve_artifacts(ctx: &Context) -> Result<Artifacts> {
    let c = &ctx.config;
    c.validate()?;
    let post = load_posterior(ctx)?;
    let mut artifacts = Artifacts::new(c.model.costs.clone(), c.model.horizon)
        .with_params("theta_hat", post.point.clone())
        .with_params("theta_true", c.truth()?)
        .with_posterior("posterior", post.draws.clone());
    artifacts.gamma = c.model.gamma;
    for (dr, name) in [(false, "belief-ppo"), (true, "belief-ppo-dr")] {
        let path = c.checkpoint_path(dr);
        if path.exists() {
            let meta = require(&path, "checkpoint", "train")?;
            check_lineage(&[("posterior", &post.meta), (name, &meta)], ctx.allow_mixed)?;
            artifacts = artifacts.with_checkpoint(name, Checkpoint::load(&path)?);
        }
    }
    Ok(artifacts)
}
