//! Stage cache. `manifest.json` records, per stage, the key it ran under and the
//! sha256 of every file it wrote. A stage is skipped only when its key matches
//! and every recorded output still hashes to the recorded value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub key: String,
    /// Output path relative to the run directory → sha256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Key of a stage run: stage name, tool version, config hash and the hashes of its inputs.
pub fn stage_key(stage: &str, config_hash: &str, inputs: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    for part in [stage, crate::io::TOOL_VERSION, config_hash] {
        h.update(part.as_bytes());
        h.update([0]);
    }
    for (name, digest) in inputs {
        h.update(name.as_bytes());
        h.update([0]);
        h.update(digest.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

impl Manifest {
    /// Loads the manifest of a run directory; a missing or unreadable one is empty.
    pub fn load(root: &Path) -> Self {
        let path = root.join(MANIFEST_FILE);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_else(|e| {
                tracing::warn!(path = %path.display(), error = %e, "unreadable manifest ignored");
                Manifest::default()
            }),
            Err(_) => Manifest::default(),
        }
    }

    pub fn save(&self, root: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::format(root.join(MANIFEST_FILE), e))?;
        text.push('\n');
        crate::io::write_bytes(&root.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn is_fresh(&self, root: &Path, stage: &str, key: &str) -> bool {
        let Some(rec) = self.stages.get(stage) else { return false };
        if rec.key != key {
            return false;
        }
        rec.outputs.iter().all(|(rel, digest)| match sha256_file(&root.join(rel)) {
            Ok(d) => &d == digest,
            Err(_) => false,
        })
    }

    pub fn record(&mut self, root: &Path, stage: &str, key: String, outputs: &[PathBuf]) -> CliResult<()> {
        let mut map = BTreeMap::new();
        for p in outputs {
            map.insert(relative(root, p), sha256_file(p)?);
        }
        self.stages.insert(stage.to_string(), StageRecord { key, outputs: map });
        Ok(())
    }

    /// Drops a stage and everything after it, so downstream records never outlive their inputs.
    pub fn invalidate(&mut self, stage: &str) {
        self.stages.remove(stage);
    }

    /// Hashes of a stage's recorded outputs, for use as the next stage's inputs.
    pub fn outputs_of(&self, stage: &str) -> Vec<(String, String)> {
        self.stages.get(stage).map(|r| r.outputs.iter().map(|(k, v)| (k.clone(), v.clone())).collect()).unwrap_or_default()
    }
}
