//! Run-directory layout for learn and solve stages.
//!
//! Trajectory files are replay artifacts and must be byte-identical across
//! warm-cache reruns, so wall time and other run-varying bookkeeping live
//! in meta.json only.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use ltc_core::diff::{parse_patch, Patch};

use crate::agent::{ToolCallRecord, Trajectory, TrajectoryCondition};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub task_id: String,
    pub condition: TrajectoryCondition,
    pub steps: u32,
    pub truncated: bool,
    pub wall_time: f64,
}

pub fn learn_task_dir(out_dir: &Path, run_id: &str, task_id: &str) -> PathBuf {
    out_dir
        .join("runs")
        .join(run_id)
        .join("learn")
        .join(task_id)
}

pub fn solve_task_dir(out_dir: &Path, run_id: &str, condition: &str, task_id: &str) -> PathBuf {
    out_dir
        .join("runs")
        .join(run_id)
        .join("solve")
        .join(condition)
        .join(task_id)
}

pub fn transcripts_path(out_dir: &Path, run_id: &str) -> PathBuf {
    out_dir.join("runs").join(run_id).join("transcripts.jsonl")
}

/// Persists one trajectory: tool calls as jsonl, the candidate patch as
/// unified-diff text, and the meta record.
pub fn persist_trajectory(dir: &Path, trajectory: &Trajectory, patch_file: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut jsonl = std::fs::File::create(dir.join("trajectory.jsonl"))?;
    for call in &trajectory.tool_calls {
        let mut line = serde_json::to_vec(call)?;
        line.push(b'\n');
        jsonl.write_all(&line)?;
    }
    std::fs::write(dir.join(patch_file), trajectory.final_patch.to_unified())?;
    let meta = TrajectoryMeta {
        task_id: trajectory.task_id.clone(),
        condition: trajectory.condition,
        steps: trajectory.steps,
        truncated: trajectory.truncated,
        wall_time: trajectory.wall_time,
    };
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_trajectory(dir: &Path, patch_file: &str) -> Result<(TrajectoryMeta, Vec<ToolCallRecord>, Patch)> {
    let meta: TrajectoryMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)
            .with_context(|| format!("parsing meta in {}", dir.display()))?;
    let mut calls = Vec::new();
    let text = std::fs::read_to_string(dir.join("trajectory.jsonl"))?;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        calls.push(serde_json::from_str(line)?);
    }
    let patch_text = std::fs::read_to_string(dir.join(patch_file))?;
    let patch = parse_patch(&patch_text)
        .map_err(|e| anyhow::anyhow!("parsing {}/{patch_file}: {e}", dir.display()))?;
    Ok((meta, calls, patch))
}

/// Task ids under a solve run's condition directory.
pub fn list_solved_tasks(out_dir: &Path, run_id: &str, condition: &str) -> Result<Vec<String>> {
    let dir = out_dir.join("runs").join(run_id).join("solve").join(condition);
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(&dir)
        .with_context(|| format!("no solve outputs at {}", dir.display()))?
    {
        let entry = entry?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}
