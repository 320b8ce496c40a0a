//! Versioned parameter files and the bundled synthetic ground truth.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::{ObservationModel, PomdpParams, TransitionModel};

pub const PARAMS_SCHEMA_VERSION: u32 = 1;

const THETA_TRUE_JSON: &str = include_str!("../fixtures/theta_true.json");

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    schema_version: u32,
    transition: TransitionModel,
    observation: ObservationModel,
}

/// Synthetic ground truth used by tests and the desk-scale experiments.
///
/// Transition rows are the (clamped) modes of the default structured
/// Dirichlet priors; the observation regimes are hand-set and well separated.
pub fn theta_true() -> PomdpParams {
    params_from_json(THETA_TRUE_JSON).expect("bundled fixture is valid")
}

pub fn params_from_json(text: &str) -> Result<PomdpParams> {
    let file: ParamsFile = serde_json::from_str(text).map_err(|e| ModelError::Parse {
        line: e.line(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    if file.schema_version != PARAMS_SCHEMA_VERSION {
        return Err(ModelError::InvalidArgument(format!(
            "parameter file schema version {} is not supported (expected {PARAMS_SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    let params = PomdpParams { transition: file.transition, observation: file.observation };
    params.validate()?;
    Ok(params)
}

pub fn params_to_json(params: &PomdpParams) -> String {
    let file = ParamsFile {
        schema_version: PARAMS_SCHEMA_VERSION,
        transition: params.transition.clone(),
        observation: params.observation.clone(),
    };
    serde_json::to_string_pretty(&file).expect("parameters serialize")
}

pub fn load_params(path: &Path) -> Result<PomdpParams> {
    params_from_json(&fs::read_to_string(path)?)
}

pub fn save_params(path: &Path, params: &PomdpParams) -> Result<()> {
    let mut text = params_to_json(params);
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Byte offset of a 1-based (line, column) position.
pub fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    line_start + column.saturating_sub(1)
}
