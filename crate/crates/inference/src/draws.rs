//! Posterior draws in constrained coordinates, point summaries and JSONL
//! persistence (a header line followed by one line per draw).

use std::fs;
use std::io::Write;
use std::path::Path;

use maint_core::fixtures::byte_offset;
use maint_core::{Dims, PomdpParams};
use serde::{Deserialize, Serialize};

use crate::error::{InferenceError, Result};
use crate::transform::{constrained_dim, flatten, unflatten, Layout, Slice};

pub const FORMAT: &str = "maint-posterior";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsHeader {
    pub format: String,
    pub version: u32,
    pub states: usize,
    pub actions: usize,
    /// Dimension of the sampler's unconstrained space.
    pub unconstrained_dim: usize,
    /// Unconstrained coordinate slices.
    pub layout: Vec<Slice>,
    /// Names of the stored constrained coordinates.
    pub names: Vec<String>,
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub seed: u64,
    pub sampler: String,
    pub prior_fingerprint: String,
}

impl DrawsHeader {
    pub fn new(dims: Dims, chains: usize, warmup: usize, samples: usize, seed: u64, sampler: &str, prior_fingerprint: String) -> Self {
        let layout = Layout::new(dims);
        Self {
            format: FORMAT.into(),
            version: FORMAT_VERSION,
            states: dims.states,
            actions: dims.actions,
            unconstrained_dim: layout.dim(),
            layout: layout.slices(),
            names: layout.constrained_names(),
            chains,
            warmup,
            samples,
            seed,
            sampler: sampler.into(),
            prior_fingerprint,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims { states: self.states, actions: self.actions }
    }
}

/// One stored draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub chain: usize,
    pub draw: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub header: DrawsHeader,
    /// Chain-major rows.
    pub records: Vec<DrawRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Mean,
    Median,
}

impl PosteriorDraws {
    /// Build from per-chain parameter sets.
    pub fn from_chains(header: DrawsHeader, chains: &[Vec<PomdpParams>]) -> Self {
        let records = chains
            .iter()
            .enumerate()
            .flat_map(|(c, draws)| draws.iter().enumerate().map(move |(i, t)| DrawRecord { chain: c, draw: i, values: flatten(t) }))
            .collect();
        Self { header, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dims(&self) -> Dims {
        self.header.dims()
    }

    /// Rows grouped by chain id (ascending).
    pub fn by_chain(&self) -> Vec<Vec<&[f64]>> {
        let n = self.records.iter().map(|r| r.chain + 1).max().unwrap_or(0);
        let mut out = vec![Vec::new(); n];
        for r in &self.records {
            out[r.chain].push(&r.values[..]);
        }
        out.retain(|c| !c.is_empty());
        out
    }

    pub fn params(&self, i: usize) -> Result<PomdpParams> {
        unflatten(self.dims(), &self.records[i].values)
    }

    pub fn all_params(&self) -> Result<Vec<PomdpParams>> {
        (0..self.len()).map(|i| self.params(i)).collect()
    }

    /// Check the header and that every row decodes to valid parameters.
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.format != FORMAT || h.version != FORMAT_VERSION {
            return Err(InferenceError::Incompatible(format!("unsupported draws format {} v{}", h.format, h.version)));
        }
        let p = constrained_dim(h.dims());
        if h.names.len() != p || h.unconstrained_dim != Layout::new(h.dims()).dim() {
            return Err(InferenceError::Incompatible("header dimensions disagree with (S, A)".into()));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.chain >= h.chains {
                return Err(InferenceError::Incompatible(format!("draw {i} has chain id {} of {}", r.chain, h.chains)));
            }
            self.params(i)?.validate().map_err(|e| InferenceError::Incompatible(format!("draw {i}: {e}")))?;
        }
        Ok(())
    }

    /// Number of draws violating the ordering of initial locations (state
    /// identities swapped).
    pub fn label_swaps(&self) -> usize {
        let s = self.header.states;
        let start = self.header.names.iter().position(|n| n == "initial.loc[s0]").expect("layout has initial locations");
        self.records
            .iter()
            .filter(|r| (1..s).any(|i| !(r.values[start + i] < r.values[start + i - 1])))
            .count()
    }

    /// Entrywise mean or median with simplex rows renormalized.
    pub fn point(&self, kind: PointKind) -> Result<PomdpParams> {
        posterior_point(self, kind)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, e: serde_json::Error| InferenceError::Parse {
            line,
            offset: byte_offset(text, line, e.column()),
            message: e.to_string(),
        };
        let (i, first) = lines.next().ok_or(InferenceError::Parse { line: 1, offset: 0, message: "empty file".into() })?;
        let header: DrawsHeader = serde_json::from_str(first).map_err(|e| parse_err(i + 1, e))?;
        let width = header.names.len();
        let mut records = Vec::new();
        for (i, line) in lines {
            let r: DrawRecord = serde_json::from_str(line).map_err(|e| parse_err(i + 1, e))?;
            if r.values.len() != width {
                return Err(InferenceError::Parse {
                    line: i + 1,
                    offset: byte_offset(text, i + 1, 1),
                    message: format!("record has {} values, header declares {width}", r.values.len()),
                });
            }
            records.push(r);
        }
        let draws = Self { header, records };
        draws.validate()?;
        Ok(draws)
    }
}

pub fn save_draws(draws: &PosteriorDraws, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(draws.to_jsonl().as_bytes())?;
    Ok(())
}

pub fn load_draws(path: &Path) -> Result<PosteriorDraws> {
    PosteriorDraws::parse(&fs::read_to_string(path)?)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Entrywise posterior mean or median of the constrained parameters; simplex
/// rows are renormalized after summarizing.
pub fn posterior_point(draws: &PosteriorDraws, kind: PointKind) -> Result<PomdpParams> {
    if draws.is_empty() {
        return Err(InferenceError::Incompatible("no draws".into()));
    }
    let dims = draws.dims();
    let p = draws.header.names.len();
    let n = draws.len() as f64;
    let mut point: Vec<f64> = (0..p)
        .map(|j| match kind {
            PointKind::Mean => draws.records.iter().map(|r| r.values[j]).sum::<f64>() / n,
            PointKind::Median => median(draws.records.iter().map(|r| r.values[j]).collect()),
        })
        .collect();
    let s = dims.states;
    for row in point[..s * (1 + dims.actions * s)].chunks_mut(s) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
    }
    let theta = unflatten(dims, &point)?;
    theta.validate()?;
    Ok(theta)
}
