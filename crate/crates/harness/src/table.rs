//! Result tables. The text and JSON forms are both rendered from
//! [`ResultTable`].

use std::fmt::Write;

use maint_core::EvalStats;
use serde::{Deserialize, Serialize};

use crate::artifact::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub mean: f64,
    pub se: f64,
    pub max: f64,
    pub min: f64,
    pub n: usize,
}

impl TableRow {
    pub fn new(method: &str, s: &EvalStats) -> Self {
        Self { method: method.into(), mean: s.mean, se: s.se, max: s.max, min: s.min, n: s.n }
    }

    pub fn stats(&self) -> EvalStats {
        EvalStats { mean: self.mean, se: self.se, max: self.max, min: self.min, n: self.n, totals: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub schema_version: u32,
    pub title: String,
    pub environment: String,
    pub episodes: usize,
    pub seed: u64,
    pub fingerprint: String,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Json,
}

impl ResultTable {
    pub fn new(title: &str, environment: &str, episodes: usize, seed: u64, fingerprint: String, rows: Vec<TableRow>) -> Self {
        Self { schema_version: SCHEMA_VERSION, title: title.into(), environment: environment.into(), episodes, seed, fingerprint, rows }
    }

    pub fn row(&self, method: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Text => self.to_text(),
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("table serializes");
                s.push('\n');
                s
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} ({}; {} episodes; seed {})", self.title, self.environment, self.episodes, self.seed);
        let width = self.rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
        let _ = writeln!(out, "{:<width$}  {:>12}  {:>9}  {:>12}  {:>12}  {:>7}", "method", "mean", "se", "max", "min", "n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>12.2}  {:>9.2}  {:>12.2}  {:>12.2}  {:>7}",
                r.method, r.mean, r.se, r.max, r.min, r.n
            );
        }
        let _ = writeln!(out, "fingerprint {}", self.fingerprint);
        out
    }
}
