//! Versioned network checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RlError};
use crate::mlp::MlpParams;
use crate::policy::PolicyInput;

pub const CHECKPOINT_FORMAT: &str = "maint-ppo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub input: PolicyInput,
    pub states: usize,
    pub actions: usize,
    pub config_fingerprint: String,
    /// Evaluation iteration (1-based) at which this network was best.
    pub iteration: usize,
    pub eval_mean: f64,
    pub eval_se: f64,
    pub params: MlpParams,
}

impl Checkpoint {
    pub fn new(params: MlpParams, states: usize, config_fingerprint: String, iteration: usize, eval_mean: f64, eval_se: f64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            input: PolicyInput::Belief,
            states,
            actions: params.actions,
            config_fingerprint,
            iteration,
            eval_mean,
            eval_se,
            params,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(RlError::Checkpoint(format!("unsupported format {} v{}", self.format, self.version)));
        }
        if self.params.input != self.input.width(self.states) || self.params.actions != self.actions {
            return Err(RlError::Checkpoint("network shape disagrees with the declared states/actions".into()));
        }
        self.params.validate()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }
}
