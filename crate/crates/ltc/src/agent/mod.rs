//! Agent abstraction: a runner explores a task worktree through a fixed
//! five-tool surface and leaves its candidate patch in the worktree.

mod llm;
mod scripted;
pub mod tools;

pub use llm::LlmAgent;
pub use scripted::ScriptedAgent;
pub use tools::{ToolError, ToolRequest};

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ltc_core::diff::Patch;

use crate::gateway::Gateway;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryCondition {
    Learn,
    Skill,
    Baseline,
}

impl TrajectoryCondition {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrajectoryCondition::Learn => "learn",
            TrajectoryCondition::Skill => "skill",
            TrajectoryCondition::Baseline => "baseline",
        }
    }
}

/// One executed tool call; arguments and results are stored as digests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub index: u32,
    pub tool: String,
    pub args_digest: String,
    pub result_digest: String,
}

/// One agent attempt: the ordered tool calls plus the worktree diff the
/// attempt left behind. `wall_time` is runtime bookkeeping and is
/// persisted in meta.json, never in the replayable trajectory file.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub task_id: String,
    pub condition: TrajectoryCondition,
    pub tool_calls: Vec<ToolCallRecord>,
    pub steps: u32,
    pub final_patch: Patch,
    pub wall_time: f64,
    pub truncated: bool,
}

/// What a runner reports back; the caller captures the worktree diff and
/// assembles the [`Trajectory`].
#[derive(Debug, Clone, Default)]
pub struct AgentOutcome {
    pub tool_calls: Vec<ToolCallRecord>,
    pub truncated: bool,
}

pub struct AgentContext<'a> {
    pub task_id: &'a str,
    pub query: &'a str,
    /// Rendered skill document; byte-empty for baseline and learn-from-
    /// empty runs.
    pub rendered_memory: &'a str,
    pub worktree: &'a Path,
    pub step_budget: u32,
    pub backend_id: &'a str,
    /// "learn_attempt" or "solve".
    pub stage_tag: &'a str,
    pub extra_tags: Vec<String>,
    pub gateway: &'a Gateway,
}

impl AgentContext<'_> {
    pub fn audit_tags(&self) -> Vec<String> {
        let mut tags = vec![self.stage_tag.to_string(), format!("task:{}", self.task_id)];
        tags.extend(self.extra_tags.iter().cloned());
        tags
    }
}

pub trait AgentRunner: Send + Sync {
    fn run(&self, ctx: &AgentContext) -> anyhow::Result<AgentOutcome>;
}

/// Short content digest used for tool arguments and results.
pub fn short_digest(content: &str) -> String {
    let hash = Sha256::digest(content.as_bytes());
    hex::encode(&hash[..8])
}
