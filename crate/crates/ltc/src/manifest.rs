//! Run manifests: every stage writes exactly one `run.json` into its
//! output directory, carrying enough (config snapshot + dataset digest +
//! repo head) to re-run the stage.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RUN_MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub stage: String,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repo_head: Option<String>,
    pub started: String,
    pub finished: String,
    pub outcome: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn begin(stage: &str, config: serde_json::Value) -> RunManifest {
        RunManifest {
            run_id: new_run_id(),
            stage: stage.to_string(),
            config,
            dataset_digest: None,
            repo_head: None,
            started: chrono::Utc::now().to_rfc3339(),
            finished: String::new(),
            outcome: BTreeMap::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.outcome
            .insert(key.to_string(), serde_json::to_value(value).unwrap());
    }

    pub fn finish(&mut self, out_dir: &Path) -> Result<()> {
        self.finished = chrono::Utc::now().to_rfc3339();
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join(RUN_MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<RunManifest> {
        let path = dir.join(RUN_MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("no run manifest at {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Sortable, collision-free run id: UTC second stamp + random suffix.
pub fn new_run_id() -> String {
    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let suffix: u32 = rand::random::<u32>() & 0xffff;
    format!("{stamp}-{suffix:04x}")
}

/// Content digest over the dataset's task files and manifest, so run
/// manifests can pin the exact inputs a stage consumed.
pub fn dataset_digest(dataset_dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    let mut entries: Vec<_> = Vec::new();
    let tasks_dir = dataset_dir.join("tasks");
    if tasks_dir.is_dir() {
        for entry in std::fs::read_dir(&tasks_dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                entries.push(path);
            }
        }
    }
    entries.sort();
    let manifest = dataset_dir.join("manifest.json");
    if manifest.exists() {
        entries.insert(0, manifest);
    }
    for path in entries {
        hasher.update(path.file_name().unwrap().to_string_lossy().as_bytes());
        hasher.update(std::fs::read(&path)?);
    }
    Ok(hex::encode(hasher.finalize()))
}
