//! Experiment configuration: one TOML file per experiment, with relative
//! paths resolved against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use maint_core::dataset::BehaviorPolicy;
use maint_core::fixtures::{load_params, theta_true};
use maint_core::{CostTable, Dims, PomdpParams};
use maint_inference::{EmissionMode, McmcConfig, PointKind, PriorConfig};
use maint_rl::{PpoConfig, Schedule};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Parameters of the data-generating model; the built-in fixture when absent.
    pub truth: Option<PathBuf>,
    pub data: PathBuf,
    pub posterior: PathBuf,
    pub checkpoints: PathBuf,
    pub results: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            truth: None,
            data: "data/trajectories.jsonl".into(),
            posterior: "posterior/draws.jsonl".into(),
            checkpoints: "checkpoints".into(),
            results: "results".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    /// Discount of the dynamic-programming benchmarks.
    pub gamma: f64,
    pub costs: CostTable,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { states: 4, actions: 3, horizon: 50, gamma: 1.0, costs: CostTable::railway() }
    }
}

impl ModelSection {
    pub fn dims(&self) -> Dims {
        Dims { states: self.states, actions: self.actions }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub series: usize,
    pub steps: usize,
    pub behavior: BehaviorPolicy,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self { series: 62, steps: 20, behavior: BehaviorPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferSection {
    /// Prior configuration as JSON; the structured default when absent.
    pub priors: Option<PathBuf>,
    pub emissions: EmissionMode,
    /// Point summary used as the model estimate.
    pub point: PointKind,
    #[serde(flatten)]
    pub mcmc: McmcConfig,
}

impl Default for InferSection {
    fn default() -> Self {
        Self { priors: None, emissions: EmissionMode::Full, point: PointKind::Mean, mcmc: McmcConfig::desk() }
    }
}

/// Models the evaluation episodes run in.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Environment {
    /// The posterior point estimate.
    #[default]
    Point,
    /// A fresh posterior draw per episode.
    Posterior,
    /// The data-generating parameters.
    Truth,
}

impl Environment {
    pub fn label(self) -> &'static str {
        match self {
            Environment::Point => "posterior point estimate",
            Environment::Posterior => "per-episode posterior draws",
            Environment::Truth => "data-generating model",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub episodes: usize,
    pub environment: Environment,
    /// Act with the network's argmax action.
    pub greedy: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { episodes: 20_000, environment: Environment::Point, greedy: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub generate: u64,
    pub infer: u64,
    pub train: u64,
    pub evaluate: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { generate: 1, infer: 2, train: 3, evaluate: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub generate: GenerateSection,
    #[serde(default)]
    pub infer: InferSection,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default = "Schedule::desk")]
    pub schedule: Schedule,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    #[serde(default)]
    pub seeds: Seeds,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            model: ModelSection::default(),
            generate: GenerateSection::default(),
            infer: InferSection::default(),
            ppo: PpoConfig::default(),
            schedule: Schedule::desk(),
            evaluate: EvaluateSection::default(),
            seeds: Seeds::default(),
            base: PathBuf::from("."),
        }
    }
}

impl ExperimentConfig {
    /// Keys missing from `text` keep their values from [`Default`], however
    /// deeply nested, so a partial section never falls back to a library
    /// default that differs from the experiment default.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let invalid = |e: &dyn std::fmt::Display| HarnessError::validation(format!("invalid config: {e}"));
        let user: toml::Table = toml::from_str(text).map_err(|e| invalid(&e))?;
        let mut merged = toml::Table::try_from(Self::default()).expect("default config serializes");
        merge(&mut merged, user);
        let mut c: Self = toml::Value::Table(merged).try_into().map_err(|e| invalid(&e))?;
        c.base = base.to_path_buf();
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            HarnessError::validation(format!("cannot read config {}: {e}", path.display()))
                .with_hint("pass an existing file with --config, or omit it to use the defaults")
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        Self::parse(&text, &base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn data_path(&self) -> PathBuf {
        self.resolve(&self.paths.data)
    }

    pub fn posterior_path(&self) -> PathBuf {
        self.resolve(&self.paths.posterior)
    }

    pub fn results_dir(&self) -> PathBuf {
        self.resolve(&self.paths.results)
    }

    pub fn checkpoint_path(&self, dr: bool) -> PathBuf {
        let name = if dr { "belief-ppo-dr.json" } else { "belief-ppo.json" };
        self.resolve(&self.paths.checkpoints).join(name)
    }

    pub fn report_path(&self, dr: bool) -> PathBuf {
        self.checkpoint_path(dr).with_extension("report.json")
    }

    pub fn truth(&self) -> Result<PomdpParams> {
        let theta = match &self.paths.truth {
            Some(p) => {
                let path = self.resolve(p);
                if !path.exists() {
                    return Err(HarnessError::validation(format!("truth parameters {} not found", path.display()))
                        .with_hint("fix paths.truth or remove it to use the built-in fixture"));
                }
                load_params(&path)?
            }
            None => theta_true(),
        };
        if theta.dims() != self.model.dims() {
            return Err(dims_mismatch("truth parameters", theta.dims(), self.model.dims()));
        }
        Ok(theta)
    }

    pub fn priors(&self) -> Result<PriorConfig> {
        let priors = match &self.infer.priors {
            Some(p) => {
                let path = self.resolve(p);
                let text = fs::read_to_string(&path).map_err(|e| {
                    HarnessError::validation(format!("cannot read priors {}: {e}", path.display()))
                        .with_hint("fix infer.priors or remove it to use the structured default")
                })?;
                serde_json::from_str::<PriorConfig>(&text)?
            }
            None => PriorConfig::structured(self.model.dims()),
        };
        priors.validate()?;
        if priors.dims() != self.model.dims() {
            return Err(dims_mismatch("prior configuration", priors.dims(), self.model.dims()));
        }
        Ok(priors)
    }

    /// Checks that need no artifacts.
    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.states < 2 || m.actions < 2 {
            return Err(HarnessError::validation("need at least 2 states and 2 actions"));
        }
        if m.horizon < 1 {
            return Err(HarnessError::validation("horizon must be at least 1"));
        }
        if !(m.gamma > 0.0 && m.gamma <= 1.0) {
            return Err(HarnessError::validation(format!("gamma must lie in (0, 1], got {}", m.gamma)));
        }
        if m.costs.dims() != m.dims() {
            return Err(dims_mismatch("cost table", m.costs.dims(), m.dims()));
        }
        m.costs.validate()?;
        if self.generate.series < 1 || self.generate.steps < 1 {
            return Err(HarnessError::validation("generate.series and generate.steps must be positive"));
        }
        if self.generate.behavior.actions != m.actions {
            return Err(HarnessError::validation(format!(
                "behavior policy uses {} actions but the model has {}",
                self.generate.behavior.actions, m.actions
            )));
        }
        self.infer.mcmc.validate()?;
        self.ppo.validate(m.horizon)?;
        self.schedule.validate(&self.ppo)?;
        if self.evaluate.episodes < 1 {
            return Err(HarnessError::validation("evaluate.episodes must be positive"));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn dims_mismatch(what: &str, got: Dims, want: Dims) -> HarnessError {
    HarnessError::validation(format!(
        "{what} has S={}, A={} but the model section declares S={}, A={}",
        got.states, got.actions, want.states, want.actions
    ))
    .with_hint("make model.states/model.actions agree with every artifact, or regenerate the artifact")
}
