//! Dataset directory layout: `manifest.json`, one task file per task under
//! `tasks/`, and `rejections.jsonl`. Task files embed the oracle patch as
//! unified-diff text and contain nothing wall-clock dependent, so reruns
//! with identical inputs are byte-identical.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ltc_core::mining::{CategoryTaxonomy, Pool, TaskSpec};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub scanned: u64,
    pub prefilter_rejected: u64,
    pub post_prefilter: u64,
    pub llm_rejected: u64,
    pub accepted: u64,
    pub tagged: u64,
    pub sampled_learn: u64,
    pub sampled_test: u64,
    pub query_excluded: u64,
    /// Records left unassessed/untagged because a backend call failed;
    /// they are reported, not silently dropped.
    #[serde(default)]
    pub gateway_failures: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub repo_path: String,
    pub repo_head: String,
    pub taxonomy: CategoryTaxonomy,
    pub counts: StageCounts,
    pub config: serde_json::Value,
    pub seed: u64,
    /// The normalized temporal boundary T* (unix seconds).
    pub boundary: i64,
    pub learn_tasks: Vec<String>,
    pub test_tasks: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub commit_id: String,
    pub stage: String,
    pub reason: String,
}

pub fn tasks_dir(dataset_dir: &Path) -> PathBuf {
    dataset_dir.join("tasks")
}

pub fn write_dataset(
    dir: &Path,
    manifest: &DatasetManifest,
    tasks: &[TaskSpec],
    rejections: &[RejectionRecord],
) -> Result<()> {
    std::fs::create_dir_all(tasks_dir(dir))?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest)?,
    )?;
    for task in tasks {
        let path = tasks_dir(dir).join(format!("{}.json", task.task_id));
        std::fs::write(&path, serde_json::to_string_pretty(task)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let mut file = std::fs::File::create(dir.join("rejections.jsonl"))?;
    for r in rejections {
        let mut line = serde_json::to_vec(r)?;
        line.push(b'\n');
        file.write_all(&line)?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub tasks: BTreeMap<String, TaskSpec>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            bail!(
                "{} is not a dataset directory (no manifest.json); run `ltc mine` first",
                dir.display()
            );
        }
        let manifest: DatasetManifest =
            serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
                .context("parsing dataset manifest")?;
        let mut tasks = BTreeMap::new();
        for entry in std::fs::read_dir(tasks_dir(dir)).context("dataset has no tasks/ directory")? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let task: TaskSpec = serde_json::from_str(&std::fs::read_to_string(&path)?)
                .with_context(|| format!("parsing {}", path.display()))?;
            tasks.insert(task.task_id.clone(), task);
        }
        Ok(Dataset { manifest, tasks })
    }

    pub fn pool(&self, pool: Pool) -> Vec<&TaskSpec> {
        let ids = match pool {
            Pool::Learn => &self.manifest.learn_tasks,
            Pool::Test => &self.manifest.test_tasks,
        };
        ids.iter().filter_map(|id| self.tasks.get(id)).collect()
    }

    pub fn task(&self, id: &str) -> Result<&TaskSpec> {
        self.tasks
            .get(id)
            .with_context(|| format!("dataset has no task {id}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ltc_core::diff::parse_patch;
    use ltc_core::mining::Category;

    fn sample_task(id: &str, pool: Pool) -> TaskSpec {
        TaskSpec {
            task_id: id.to_string(),
            commit_id: format!("c-{id}"),
            pool,
            category: "testing".into(),
            query: "do something".into(),
            snapshot_ref: "parent".into(),
            oracle_patch: parse_patch("--- a/f\n+++ b/f\n@@ -1 +1 @@\n-a\n+b\n").unwrap(),
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest {
            repo_path: "/tmp/repo".into(),
            repo_head: "abc".into(),
            taxonomy: CategoryTaxonomy {
                categories: vec![Category {
                    label: "testing".into(),
                    description: "t".into(),
                    exemplar_rationales: vec!["r".into()],
                }],
            },
            counts: StageCounts::default(),
            config: serde_json::json!({}),
            seed: 42,
            boundary: 100,
            learn_tasks: vec!["t1".into()],
            test_tasks: vec!["t2".into()],
            warnings: vec![],
        };
        let tasks = vec![sample_task("t1", Pool::Learn), sample_task("t2", Pool::Test)];
        write_dataset(dir.path(), &manifest, &tasks, &[]).unwrap();

        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(loaded.tasks.len(), 2);
        assert_eq!(loaded.pool(Pool::Learn)[0].task_id, "t1");
        assert_eq!(
            loaded.tasks["t1"].oracle_patch,
            tasks[0].oracle_patch,
            "patch survives text round trip"
        );
    }

    #[test]
    fn missing_dataset_is_actionable() {
        let dir = tempfile::tempdir().unwrap();
        let err = Dataset::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("ltc mine"));
    }
}
