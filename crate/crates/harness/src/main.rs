use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maint_core::fixtures::save_params;
use maint_harness::{
    cmd_compare, cmd_evaluate, cmd_generate, cmd_infer, cmd_rollout, cmd_train, serve_artifacts, Context, Environment, EvalRequest,
    ExperimentConfig, Format, HarnessError, Method, Result,
};
use maint_inference::{EmissionMode, SamplerKind};
use maint_rl::OptimizerKind;
use serde::de::DeserializeOwned;

#[derive(Parser, Debug)]
#[command(name = "maint", version, about = "Maintenance POMDP experiments: data, inference, training, evaluation")]
struct Cli {
    /// Experiment config (TOML); built-in desk defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Proceed even when input artifacts come from different lineages.
    #[arg(long, global = true)]
    allow_mixed: bool,
    /// Replace outputs produced under another fingerprint.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a synthetic trajectory dataset.
    Generate {
        #[arg(long)]
        series: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the data-generating parameters to this file.
        #[arg(long)]
        save_truth: Option<PathBuf>,
    },
    /// Sample the posterior of the model given the dataset.
    Infer {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        /// nuts or random_walk.
        #[arg(long, value_parser = parse_enum::<SamplerKind>)]
        sampler: Option<SamplerKind>,
        /// full or disabled.
        #[arg(long, value_parser = parse_enum::<EmissionMode>)]
        emissions: Option<EmissionMode>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a belief-input PPO agent.
    Train {
        /// Draw the training model from the posterior per episode.
        #[arg(long)]
        dr: bool,
        #[command(flatten)]
        ppo: PpoArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate one method.
    Evaluate {
        #[arg(long, value_enum)]
        method: Method,
        #[command(flatten)]
        eval: EvalArgs,
        /// Dump full episode traces as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        trace_episodes: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Evaluate every method on common episode seeds.
    Compare {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Record one evaluation episode in full.
    Rollout {
        #[arg(long, value_enum)]
        method: Method,
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long, default_value_t = 0)]
        episode: usize,
        /// Output file; the trace goes to stdout when omitted.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Serve the session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory of static files served under `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Print the effective configuration.
    ShowConfig,
}

#[derive(Args, Debug, Default)]
struct EvalArgs {
    #[arg(long, value_enum)]
    environment: Option<Environment>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl EvalArgs {
    fn request(&self) -> EvalRequest {
        EvalRequest { environment: self.environment, episodes: self.episodes, seed: self.seed }
    }
}

#[derive(Args, Debug, Default)]
struct PpoArgs {
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    rollout_steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    gamma_train: Option<f64>,
    #[arg(long)]
    gae_lambda: Option<f64>,
    #[arg(long)]
    value_coeff: Option<f64>,
    #[arg(long)]
    entropy_coeff: Option<f64>,
    #[arg(long)]
    max_grad_norm: Option<f64>,
    #[arg(long)]
    reward_scale: Option<f64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// adam or sgd.
    #[arg(long, value_parser = parse_enum::<OptimizerKind>)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    total_steps: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Sample actions during training evaluations instead of taking the argmax.
    #[arg(long)]
    stochastic_eval: bool,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = v;
        }
    };
}

/// Paths given on the command line are relative to the working directory,
/// not to the config file.
fn cwd_path(p: PathBuf) -> PathBuf {
    std::path::absolute(&p).unwrap_or(p)
}

fn apply_ppo(c: &mut ExperimentConfig, a: PpoArgs) {
    let p = &mut c.ppo;
    set!(p.clip, a.clip);
    set!(p.learning_rate, a.learning_rate);
    set!(p.rollout_steps, a.rollout_steps);
    set!(p.epochs, a.epochs);
    set!(p.minibatch, a.minibatch);
    set!(p.gamma, a.gamma_train);
    set!(p.gae_lambda, a.gae_lambda);
    set!(p.value_coeff, a.value_coeff);
    set!(p.entropy_coeff, a.entropy_coeff);
    set!(p.max_grad_norm, a.max_grad_norm);
    set!(p.reward_scale, a.reward_scale);
    set!(p.hidden, a.hidden);
    set!(p.optimizer, a.optimizer);
    let s = &mut c.schedule;
    set!(s.total_steps, a.total_steps);
    set!(s.eval_every, a.eval_every);
    set!(s.eval_episodes, a.eval_episodes);
    if a.stochastic_eval {
        s.greedy_eval = false;
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut ctx = Context { config, allow_mixed: cli.allow_mixed, force: cli.force };
    let c = &mut ctx.config;
    match cli.command {
        Command::Generate { series, steps, seed, out, save_truth } => {
            set!(c.generate.series, series);
            set!(c.generate.steps, steps);
            set!(c.seeds.generate, seed);
            set!(c.paths.data, out.map(cwd_path));
            let meta = cmd_generate(&ctx)?;
            if let Some(p) = save_truth {
                save_params(&p, &ctx.config.truth()?)?;
            }
            println!("wrote {} ({})", ctx.config.data_path().display(), meta.summary);
        }
        Command::Infer { data, priors, chains, samples, warmup, sampler, emissions, seed, out } => {
            set!(c.paths.data, data.map(cwd_path));
            if priors.is_some() {
                c.infer.priors = priors.map(cwd_path);
            }
            set!(c.infer.mcmc.chains, chains);
            set!(c.infer.mcmc.samples, samples);
            set!(c.infer.mcmc.warmup, warmup);
            set!(c.infer.mcmc.sampler, sampler);
            set!(c.infer.emissions, emissions);
            set!(c.seeds.infer, seed);
            set!(c.paths.posterior, out.map(cwd_path));
            let o = cmd_infer(&ctx)?;
            let d = &o.diagnostics;
            println!(
                "wrote {} ({} draws; max R-hat {}; min ESS {:.0}; label swaps {}; {:.1} s)",
                ctx.config.posterior_path().display(),
                o.draws.len(),
                d.max_rhat.map(|r| format!("{r:.4}")).unwrap_or_else(|| "n/a".into()),
                d.min_ess,
                o.label_swaps,
                d.runtime_secs
            );
        }
        Command::Train { dr, ppo, seed } => {
            apply_ppo(c, ppo);
            set!(c.seeds.train, seed);
            let s = cmd_train(&ctx, dr)?;
            for e in &s.report.evaluations {
                println!("{}\t{}\t{:.2}\t{:.2}", e.iteration, e.steps, e.mean, e.se);
            }
            println!("wrote {} (best {:?})", ctx.config.checkpoint_path(dr).display(), s.report.best);
        }
        Command::Evaluate { method, eval, trace, trace_episodes, format } => {
            let t = cmd_evaluate(&ctx, method, &eval.request(), trace.as_deref().map(|p| (p, trace_episodes)))?;
            print!("{}", t.render(format));
        }
        Command::Compare { eval, format } => {
            print!("{}", cmd_compare(&ctx, &eval.request())?.render(format));
        }
        Command::Rollout { method, eval, episode, trace } => {
            let t = cmd_rollout(&ctx, method, &eval.request(), episode, trace.as_deref())?;
            if trace.is_none() {
                println!("{}", serde_json::to_string_pretty(&t).map_err(HarnessError::from)?);
            } else {
                println!("episode {episode}: total cost {:.2}", t.total_cost);
            }
        }
        Command::Serve { addr, static_dir } => {
            let artifacts = serve_artifacts(&ctx)?;
            let state = maint_service::AppState::new(artifacts).map_err(|e| HarnessError::validation(e.to_string()))?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(maint_service::serve(state, addr, static_dir))?;
        }
        Command::ShowConfig => {
            ctx.config.validate()?;
            print!("{}", ctx.config.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
