//! Skill-conditioned resolution of held-out test tasks, plus the
//! skill-free baseline. Conditions differ only in the rendered memory
//! section of the system context; the baseline's is byte-empty and the
//! audit enforces that no skill text reaches a baseline prompt.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use serde::Serialize;

use ltc_core::mining::TaskSpec;
use ltc_core::skills::{render_for_prompt, SkillDocument};

use crate::agent::{AgentContext, AgentRunner, Trajectory, TrajectoryCondition};
use crate::config::SolverConfig;
use crate::gateway::{AuditRule, Gateway};
use crate::runstore;
use crate::worktree::Worktree;

pub struct SolveRunner<'a> {
    pub gateway: &'a Gateway,
    pub agent: &'a dyn AgentRunner,
    pub backend_id: String,
    pub repo: PathBuf,
    pub out_dir: PathBuf,
    pub run_id: String,
    pub options: SolverConfig,
    pub prompt_budget_chars: usize,
}

#[derive(Debug, Serialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub solved: Vec<String>,
    pub failed: BTreeMap<String, String>,
}

impl SolveRunner<'_> {
    /// Resolves one test task. `doc` present ⇔ skill condition.
    pub fn solve(&self, task: &TaskSpec, doc: Option<&SkillDocument>) -> Result<Trajectory> {
        let condition = if doc.is_some() {
            TrajectoryCondition::Skill
        } else {
            TrajectoryCondition::Baseline
        };
        let worktree = Worktree::create(
            &self.repo,
            &task.snapshot_ref,
            self.out_dir
                .join("runs")
                .join(&self.run_id)
                .join("wt")
                .join(format!("{}-{}", task.task_id, crate::manifest::new_run_id())),
        )?;
        let _oracle_audit = self.gateway.audit().register(AuditRule::for_oracle(
            &task.task_id,
            "solve",
            &task.oracle_patch,
        ));
        let _purity_audit = (condition == TrajectoryCondition::Baseline)
            .then(|| self.gateway.audit().register(AuditRule::for_baseline_purity(&task.task_id)));

        let rendered = match doc {
            Some(doc) => render_for_prompt(doc, None, self.prompt_budget_chars),
            None => String::new(),
        };
        let extra_tags = match condition {
            TrajectoryCondition::Baseline => vec!["baseline".to_string()],
            _ => vec![],
        };
        let started = Instant::now();
        let ctx = AgentContext {
            task_id: &task.task_id,
            query: &task.query,
            rendered_memory: &rendered,
            worktree: &worktree.dir,
            step_budget: self.options.max_steps,
            backend_id: &self.backend_id,
            stage_tag: "solve",
            extra_tags,
            gateway: self.gateway,
        };
        let outcome = match self.agent.run(&ctx) {
            Ok(outcome) => outcome,
            Err(e) => {
                let _ = worktree.cleanup();
                return Err(e);
            }
        };
        let final_patch = worktree.capture_diff()?;
        worktree.cleanup()?;

        let trajectory = Trajectory {
            task_id: task.task_id.clone(),
            condition,
            steps: outcome.tool_calls.len() as u32,
            tool_calls: outcome.tool_calls,
            final_patch,
            wall_time: started.elapsed().as_secs_f64(),
            truncated: outcome.truncated,
        };
        let dir = runstore::solve_task_dir(
            &self.out_dir,
            &self.run_id,
            condition.as_str(),
            &task.task_id,
        );
        runstore::persist_trajectory(&dir, &trajectory, "final.patch")?;
        Ok(trajectory)
    }

    /// One trajectory per task; per-task failures are isolated — the
    /// batch never aborts (audit violations excepted: those abort the
    /// whole run by design).
    pub fn run_condition(
        &self,
        tasks: &[&TaskSpec],
        memory_map: &BTreeMap<String, SkillDocument>,
    ) -> Result<ConditionSummary> {
        let skill_condition = !memory_map.is_empty();
        let mut summary = ConditionSummary {
            condition: if skill_condition { "skill" } else { "baseline" }.to_string(),
            solved: Vec::new(),
            failed: BTreeMap::new(),
        };
        for task in tasks {
            let doc = memory_map.get(&task.task_id);
            if skill_condition && doc.is_none() {
                summary.failed.insert(
                    task.task_id.clone(),
                    "no skill document assigned for this task".to_string(),
                );
                continue;
            }
            match self.solve(task, doc) {
                Ok(_) => summary.solved.push(task.task_id.clone()),
                Err(e) => {
                    if crate::gateway::is_audit_violation(&e) {
                        return Err(e);
                    }
                    summary.failed.insert(task.task_id.clone(), e.to_string());
                }
            }
        }
        Ok(summary)
    }
}
