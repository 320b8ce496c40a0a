//! Artifact metadata sidecars, lineage checks and the append-only results log.
//!
//! Every file a command writes gets a `<file>.meta.json` sidecar holding the
//! fingerprint of the configuration that produced it, its seed, and the
//! fingerprints of the artifacts it was built from.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub schema_version: u32,
    pub kind: String,
    pub fingerprint: String,
    pub seed: u64,
    /// Fingerprints of the upstream artifacts, by kind.
    pub lineage: BTreeMap<String, String>,
    #[serde(default)]
    pub summary: serde_json::Value,
}

impl ArtifactMeta {
    /// Fingerprint is the digest of `stage` together with the lineage.
    pub fn new(kind: &str, seed: u64, stage: serde_json::Value, lineage: BTreeMap<String, String>) -> Self {
        let fingerprint = digest(&serde_json::json!({ "kind": kind, "seed": seed, "stage": stage, "lineage": lineage }));
        Self { schema_version: SCHEMA_VERSION, kind: kind.into(), fingerprint, seed, lineage, summary: serde_json::Value::Null }
    }

    pub fn with_summary(mut self, summary: serde_json::Value) -> Self {
        self.summary = summary;
        self
    }
}

/// First 16 bytes of the SHA-256 of the compact JSON form, as hex.
pub fn digest(value: &serde_json::Value) -> String {
    hex::encode(&Sha256::digest(value.to_string().as_bytes())[..16])
}

pub fn meta_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    artifact.with_file_name(name)
}

pub fn read_meta(artifact: &Path) -> Result<ArtifactMeta> {
    let path = meta_path(artifact);
    let text = fs::read_to_string(&path).map_err(|_| {
        HarnessError::validation(format!("artifact {} has no metadata sidecar {}", artifact.display(), path.display()))
            .with_hint("regenerate the artifact with this tool")
    })?;
    let meta: ArtifactMeta = serde_json::from_str(&text)
        .map_err(|e| HarnessError::validation(format!("corrupt metadata {}: {e}", path.display())))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(HarnessError::validation(format!(
            "{} has schema version {} but this build reads version {SCHEMA_VERSION}",
            path.display(),
            meta.schema_version
        ))
        .with_hint("regenerate the artifact with this build"));
    }
    Ok(meta)
}

/// Metadata of an input artifact that must exist.
pub fn require(artifact: &Path, kind: &str, producer: &str) -> Result<ArtifactMeta> {
    if !artifact.exists() {
        return Err(HarnessError::validation(format!("missing {kind} artifact {}", artifact.display()))
            .with_hint(format!("run `maint {producer}` first or fix the path in the config")));
    }
    let meta = read_meta(artifact)?;
    if meta.kind != kind {
        return Err(HarnessError::validation(format!(
            "{} holds a {} artifact where a {kind} artifact was expected",
            artifact.display(),
            meta.kind
        )));
    }
    Ok(meta)
}

/// Refuse to replace an artifact produced under a different fingerprint.
pub fn check_overwrite(artifact: &Path, meta: &ArtifactMeta, force: bool) -> Result<()> {
    if force || !artifact.exists() {
        return Ok(());
    }
    match read_meta(artifact) {
        Ok(old) if old.fingerprint == meta.fingerprint => Ok(()),
        Ok(old) => Err(HarnessError::validation(format!(
            "{} was produced by fingerprint {} and would be replaced by {}",
            artifact.display(),
            old.fingerprint,
            meta.fingerprint
        ))
        .with_hint("write to another path, delete the old artifact, or pass --force")),
        Err(_) => Err(HarnessError::validation(format!("{} exists and carries no metadata", artifact.display()))
            .with_hint("write to another path, delete the old file, or pass --force")),
    }
}

/// Write `contents` and its sidecar; the sidecar goes last so a crash never
/// leaves fresh metadata describing stale contents.
pub fn write_artifact(artifact: &Path, contents: &[u8], meta: &ArtifactMeta) -> Result<()> {
    if let Some(dir) = artifact.parent() {
        fs::create_dir_all(dir)?;
    }
    let _ = fs::remove_file(meta_path(artifact));
    fs::write(artifact, contents)?;
    write_meta(artifact, meta)
}

pub fn write_meta(artifact: &Path, meta: &ArtifactMeta) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta)?;
    text.push('\n');
    fs::write(meta_path(artifact), text)?;
    Ok(())
}

/// Artifacts consumed together must agree on the upstream fingerprints they
/// name. Returns the conflicts; with `allow_mixed` they become warnings.
pub fn check_lineage(artifacts: &[(&str, &ArtifactMeta)], allow_mixed: bool) -> Result<Vec<String>> {
    let known: BTreeMap<&str, &str> = artifacts.iter().map(|(kind, m)| (*kind, m.fingerprint.as_str())).collect();
    let mut conflicts = Vec::new();
    for (kind, meta) in artifacts {
        for (upstream, fp) in &meta.lineage {
            if let Some(actual) = known.get(upstream.as_str()) {
                if actual != fp {
                    conflicts.push(format!("{kind} was built from {upstream} {fp}, but the current {upstream} is {actual}"));
                }
            }
        }
    }
    if !conflicts.is_empty() && !allow_mixed {
        return Err(HarnessError::validation(format!("mixed fingerprints: {}", conflicts.join("; ")))
            .with_hint("rerun the downstream stages, or pass --allow-mixed to proceed anyway"));
    }
    Ok(conflicts)
}

/// Exclusive lock on a results directory, released on drop.
#[derive(Debug)]
pub struct ResultsLock {
    path: PathBuf,
}

impl ResultsLock {
    pub fn acquire(dir: &Path, timeout: Duration) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".lock");
        let start = Instant::now();
        loop {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id())?;
                    return Ok(Self { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if start.elapsed() >= timeout {
                        return Err(HarnessError::runtime(format!("results directory {} is locked", dir.display()))
                            .with_hint(format!("wait for the other run, or remove {} if it is stale", path.display())));
                    }
                    thread::sleep(Duration::from_millis(20));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl Drop for ResultsLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub timestamp: String,
    pub command: String,
    pub fingerprint: String,
    pub seed: u64,
    pub table: serde_json::Value,
}

pub const RESULTS_FILE: &str = "results.jsonl";

/// Append one record to `<dir>/results.jsonl` under the directory lock.
pub fn append_result(dir: &Path, command: &str, fingerprint: &str, seed: u64, table: serde_json::Value) -> Result<ResultRecord> {
    let _lock = ResultsLock::acquire(dir, Duration::from_secs(60))?;
    let record = ResultRecord {
        schema_version: SCHEMA_VERSION,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
        command: command.into(),
        fingerprint: fingerprint.into(),
        seed,
        table,
    };
    let mut f = OpenOptions::new().create(true).append(true).open(dir.join(RESULTS_FILE))?;
    let mut line = serde_json::to_string(&record)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    Ok(record)
}

pub fn read_results(dir: &Path) -> Result<Vec<ResultRecord>> {
    let path = dir.join(RESULTS_FILE);
    if !path.exists() {
        return Ok(Vec::new());
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(HarnessError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(kind: &str, lineage: &[(&str, &str)]) -> ArtifactMeta {
        let lineage = lineage.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        ArtifactMeta::new(kind, 1, serde_json::json!({}), lineage)
    }

    #[test]
    fn sidecar_path() {
        assert_eq!(meta_path(Path::new("a/b.jsonl")), PathBuf::from("a/b.jsonl.meta.json"));
    }

    #[test]
    fn fingerprint_depends_on_lineage() {
        assert_ne!(meta("x", &[("data", "1")]).fingerprint, meta("x", &[("data", "2")]).fingerprint);
        assert_eq!(meta("x", &[("data", "1")]).fingerprint, meta("x", &[("data", "1")]).fingerprint);
    }

    #[test]
    fn lineage_conflicts() {
        let data = meta("data", &[]);
        let good = meta("posterior", &[("data", &data.fingerprint)]);
        let bad = meta("posterior", &[("data", "ffff")]);
        assert!(check_lineage(&[("data", &data), ("posterior", &good)], false).unwrap().is_empty());
        assert!(check_lineage(&[("data", &data), ("posterior", &bad)], false).is_err());
        assert_eq!(check_lineage(&[("data", &data), ("posterior", &bad)], true).unwrap().len(), 1);
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let a = ResultsLock::acquire(dir.path(), Duration::from_millis(10)).unwrap();
        assert!(ResultsLock::acquire(dir.path(), Duration::from_millis(50)).is_err());
        drop(a);
        assert!(ResultsLock::acquire(dir.path(), Duration::from_millis(10)).is_ok());
    }
}
