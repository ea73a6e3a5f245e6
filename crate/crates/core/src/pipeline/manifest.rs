use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A file referenced by a manifest entry, with its content hash.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Hash of stage, config, seed and input hashes; equal for repeated runs.
    pub run_id: String,
    pub stage: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    /// Parameter hashes of the components the stage produced, by name.
    pub checkpoints: BTreeMap<String, String>,
    pub metrics: Vec<String>,
    pub wall_clock_secs: f64,
    /// Index of an earlier entry with identical inputs, config and outputs.
    pub cache_hit: Option<usize>,
}

/// What a stage reports once its outputs are on disk.
#[derive(Clone, Debug, Default)]
pub struct StageRecord {
    pub stage: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub metrics: Vec<PathBuf>,
    pub checkpoints: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Append-only JSONL log of stage runs, kept at `<root>/manifest.jsonl`.
#[derive(Clone, Debug)]
pub struct RunManifest {
    root: PathBuf,
}

impl RunManifest {
    pub const FILE: &'static str = "manifest.jsonl";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self) -> PathBuf {
        self.root.join(Self::FILE)
    }

    /// Paths under the root are stored relative to it.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).to_string_lossy().into_owned()
    }

    pub fn resolve(&self, stored: &str) -> PathBuf {
        let p = Path::new(stored);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn entries(&self) -> Result<Vec<ManifestEntry>> {
        let path = self.path();
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut out = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| Error::parse(format!("{}:{}", path.display(), n + 1), e.to_string()))?);
        }
        Ok(out)
    }

    fn artifacts(&self, paths: &[PathBuf]) -> Result<Vec<Artifact>> {
        paths
            .iter()
            .map(|p| {
                if !p.exists() {
                    return Err(Error::Config(format!("manifest references missing artifact {}", p.display())));
                }
                Ok(Artifact { path: self.relative(p), sha256: file_sha256(p)? })
            })
            .collect()
    }

    /// Hashes the record's files and appends an entry; flags it as a cache
    /// hit when an earlier run matches on everything but timing.
    pub fn append(&self, rec: &StageRecord) -> Result<ManifestEntry> {
        let inputs = self.artifacts(&rec.inputs)?;
        let outputs = self.artifacts(&rec.outputs)?;
        for m in &rec.metrics {
            if !m.exists() {
                return Err(Error::Config(format!("manifest references missing metric file {}", m.display())));
            }
        }
        let mut h = Sha256::new();
        h.update(rec.stage.as_bytes());
        h.update(rec.seed.to_le_bytes());
        h.update(serde_json::to_vec(&rec.config)?);
        for a in &inputs {
            h.update(a.sha256.as_bytes());
        }
        let run_id = hex::encode(&h.finalize()[..8]);
        let previous = self.entries()?;
        let cache_hit =
            previous.iter().position(|e| e.run_id == run_id && e.stage == rec.stage && e.config == rec.config && e.inputs == inputs && e.outputs == outputs);
        let entry = ManifestEntry {
            run_id,
            stage: rec.stage.clone(),
            argv: rec.argv.clone(),
            seed: rec.seed,
            config: rec.config.clone(),
            inputs,
            outputs,
            checkpoints: rec.checkpoints.clone(),
            metrics: rec.metrics.iter().map(|m| self.relative(m)).collect(),
            wall_clock_secs: rec.wall_clock_secs,
            cache_hit,
        };
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let path = self.path();
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{}", serde_json::to_string(&entry)?).map_err(|e| Error::io(&path, e))?;
        Ok(entry)
    }
}

/// Every input of every entry must be the output of an earlier entry
/// (same path and hash); stages listed in `sources` may have no inputs.
pub fn check_chain(entries: &[ManifestEntry]) -> Result<()> {
    let mut produced: BTreeSet<&Artifact> = BTreeSet::new();
    for (i, e) in entries.iter().enumerate() {
        for a in &e.inputs {
            if !produced.contains(a) {
                return Err(Error::Config(format!("entry {i} ({}) consumes {} ({}) which no earlier stage produced", e.stage, a.path, &a.sha256[..12])));
            }
        }
        produced.extend(e.outputs.iter());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(root: &Path, stage: &str, inputs: &[&str], outputs: &[&str]) -> StageRecord {
        StageRecord {
            stage: stage.into(),
            seed: 0,
            config: serde_json::json!({"k": 1}),
            inputs: inputs.iter().map(|p| root.join(p)).collect(),
            outputs: outputs.iter().map(|p| root.join(p)).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn identical_runs_are_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new(dir.path());
        fs::write(dir.path().join("a"), b"x").unwrap();
        let first = m.append(&record(dir.path(), "gen", &[], &["a"])).unwrap();
        assert_eq!(first.cache_hit, None);
        assert_eq!(first.outputs[0].path, "a");
        let second = m.append(&record(dir.path(), "gen", &[], &["a"])).unwrap();
        assert_eq!(second.cache_hit, Some(0));
        fs::write(dir.path().join("a"), b"y").unwrap();
        assert_eq!(m.append(&record(dir.path(), "gen", &[], &["a"])).unwrap().cache_hit, None);
        assert_eq!(m.entries().unwrap().len(), 3);
    }

    #[test]
    fn missing_artifacts_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new(dir.path());
        assert!(m.append(&record(dir.path(), "gen", &[], &["nope"])).is_err());
        assert!(m.entries().unwrap().is_empty());
    }

    #[test]
    fn chain_check_finds_orphan_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let m = RunManifest::new(dir.path());
        fs::write(dir.path().join("a"), b"x").unwrap();
        fs::write(dir.path().join("b"), b"y").unwrap();
        m.append(&record(dir.path(), "gen", &[], &["a"])).unwrap();
        m.append(&record(dir.path(), "train", &["a"], &["b"])).unwrap();
        check_chain(&m.entries().unwrap()).unwrap();
        fs::write(dir.path().join("a"), b"changed").unwrap();
        m.append(&record(dir.path(), "train", &["a"], &["b"])).unwrap();
        assert!(check_chain(&m.entries().unwrap()).is_err());
    }
}
