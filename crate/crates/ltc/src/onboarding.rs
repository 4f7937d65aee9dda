//! The learning phase: per-commit blind attempt, oracle revelation,
//! contrastive reflection, and skill update — sequentially threading one
//! document or learning per-commit shards in parallel and merging them
//! pairwise. Curriculum assignment decides which learned skills a test
//! task may use.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use ltc_core::mining::TaskSpec;
use ltc_core::skills::{
    advance_empty, apply_update, empty_document, merge_with_verdicts, parse_update_ops,
    render_for_prompt, SkillDocument, UpdateOp,
};

use crate::agent::{AgentContext, AgentRunner, Trajectory, TrajectoryCondition};
use crate::config::LearningConfig;
use crate::gateway::{AuditRule, ChatRequest, Gateway, Role};
use crate::memstore;
use crate::runstore;
use crate::worktree::Worktree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnMode {
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    ByCategory,
    All,
}

/// One of the four experimental conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnCondition {
    pub mode: LearnMode,
    pub assignment: Assignment,
}

impl LearnCondition {
    pub const ALL: [LearnCondition; 4] = [
        LearnCondition { mode: LearnMode::Sequential, assignment: Assignment::All },
        LearnCondition { mode: LearnMode::Sequential, assignment: Assignment::ByCategory },
        LearnCondition { mode: LearnMode::Parallel, assignment: Assignment::All },
        LearnCondition { mode: LearnMode::Parallel, assignment: Assignment::ByCategory },
    ];

    pub fn name(&self) -> &'static str {
        match (self.mode, self.assignment) {
            (LearnMode::Sequential, Assignment::All) => "seq-all",
            (LearnMode::Sequential, Assignment::ByCategory) => "seq-bycat",
            (LearnMode::Parallel, Assignment::All) => "par-all",
            (LearnMode::Parallel, Assignment::ByCategory) => "par-bycat",
        }
    }
}

impl FromStr for LearnCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LearnCondition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown condition {s:?}; expected seq-all|seq-bycat|par-all|par-bycat"))
    }
}

impl std::fmt::Display for LearnCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Memory scope a test task draws from: the whole corpus or its category.
pub fn scope_name(assignment: Assignment, category: &str) -> String {
    match assignment {
        Assignment::All => "all".to_string(),
        Assignment::ByCategory => format!("cat-{category}"),
    }
}

/// Maps each test task to the learn tasks whose skills it may use.
pub fn assign_curriculum(
    learn_tasks: &[&TaskSpec],
    test_tasks: &[&TaskSpec],
    assignment: Assignment,
) -> (BTreeMap<String, Vec<String>>, Vec<String>) {
    let mut warnings = Vec::new();
    let mut map = BTreeMap::new();
    for test in test_tasks {
        let assigned: Vec<String> = match assignment {
            Assignment::All => learn_tasks.iter().map(|t| t.task_id.clone()).collect(),
            Assignment::ByCategory => learn_tasks
                .iter()
                .filter(|t| t.category == test.category)
                .map(|t| t.task_id.clone())
                .collect(),
        };
        if assigned.is_empty() {
            warnings.push(format!(
                "test task {} (category {:?}) has no learning commits assigned",
                test.task_id, test.category
            ));
        }
        map.insert(test.task_id.clone(), assigned);
    }
    (map, warnings)
}

/// Everything persisted about one reflection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub task_id: String,
    pub attempt_patch: ltc_core::diff::Patch,
    pub oracle_patch: ltc_core::diff::Patch,
    pub gap_summary: String,
    pub ops_applied: Vec<UpdateOp>,
    pub attempt_steps: u32,
    pub doc_version_before: u32,
    pub doc_version_after: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

pub struct LearnRunner<'a> {
    pub gateway: &'a Gateway,
    pub agent: &'a dyn AgentRunner,
    pub backend_id: String,
    /// Private clone worktrees are created from.
    pub repo: PathBuf,
    pub out_dir: PathBuf,
    pub run_id: String,
    pub options: LearningConfig,
}

#[derive(Debug, Default, Serialize)]
pub struct LearnSummary {
    pub scopes: BTreeMap<String, u32>,
    pub flagged_tasks: Vec<String>,
    pub merge_fallbacks: u32,
}

impl LearnRunner<'_> {
    fn worktree_for(&self, task: &TaskSpec) -> Result<Worktree> {
        let dir = self
            .out_dir
            .join("runs")
            .join(&self.run_id)
            .join("wt")
            .join(format!("{}-{}", task.task_id, crate::manifest::new_run_id()));
        Worktree::create(&self.repo, &task.snapshot_ref, dir)
    }

    /// Step 1: the blind attempt. The oracle-isolation rule is registered
    /// for the task before any prompt is issued.
    pub fn blind_attempt(&self, task: &TaskSpec, doc: &SkillDocument) -> Result<Trajectory> {
        let worktree = self.worktree_for(task)?;
        let _audit = self.gateway.audit().register(AuditRule::for_oracle(
            &task.task_id,
            "learn_attempt",
            &task.oracle_patch,
        ));
        let rendered = render_for_prompt(doc, None, self.options.prompt_budget_chars);
        let started = Instant::now();
        let ctx = AgentContext {
            task_id: &task.task_id,
            query: &task.query,
            rendered_memory: &rendered,
            worktree: &worktree.dir,
            step_budget: self.options.max_attempt_steps,
            backend_id: &self.backend_id,
            stage_tag: "learn_attempt",
            extra_tags: vec![],
            gateway: self.gateway,
        };
        let outcome = self.agent.run(&ctx);
        let trajectory = match outcome {
            Ok(outcome) => {
                let final_patch = worktree.capture_diff()?;
                Trajectory {
                    task_id: task.task_id.clone(),
                    condition: TrajectoryCondition::Learn,
                    steps: outcome.tool_calls.len() as u32,
                    tool_calls: outcome.tool_calls,
                    final_patch,
                    wall_time: started.elapsed().as_secs_f64(),
                    truncated: outcome.truncated,
                }
            }
            Err(err) => {
                let _ = worktree.cleanup();
                return Err(err);
            }
        };
        worktree.cleanup()?;
        let dir = runstore::learn_task_dir(&self.out_dir, &self.run_id, &task.task_id);
        runstore::persist_trajectory(&dir, &trajectory, "attempt.patch")?;
        Ok(trajectory)
    }

    fn reflection_prompt(&self, task: &TaskSpec, trajectory: &Trajectory, doc: &SkillDocument) -> String {
        let rendered = render_for_prompt(doc, None, self.options.prompt_budget_chars);
        let attempt = trajectory.final_patch.to_unified();
        format!(
            "You attempted the task below without seeing the expert's solution; that oracle \
             patch is now revealed. Compare your attempt against it: where did file \
             localisation, implementation logic, API usage, or coding style diverge? Distil \
             the reusable repository patterns into skill updates.\n\n\
             Reply with a short gap summary, then exactly one fenced block:\n\
             ```skill-ops\n\
             [{{\"op\": \"create\"|\"revise\"|\"deprecate\", \"skill_id\": \"...\", \"title\": \"...\", \
             \"body\": \"...\", \"kind\": \"style|internal_api|architecture|maintainer_preference|other\", \
             \"category\": \"...\"}}]\n\
             ```\n\
             An empty list [] is valid when there is nothing new to record.\n\n\
             ## Task\n{}\n\n## Your attempt (diff)\n{}\n\n## Oracle patch\n{}\n\n## Current skill document\n{}\n",
            task.query,
            if attempt.is_empty() { "(no changes made)" } else { &attempt },
            task.oracle_patch.source_text(),
            if rendered.is_empty() { "(empty)" } else { &rendered },
        )
    }

    /// Steps 2–3: oracle revelation, contrastive reflection, skill update.
    /// Parse or validation failures retry `reflection_retry` times; after
    /// that the document advances with zero ops and the record is flagged.
    pub fn reflect_and_update(
        &self,
        task: &TaskSpec,
        trajectory: &Trajectory,
        doc: &SkillDocument,
    ) -> Result<(SkillDocument, ReflectionRecord)> {
        let step = doc.version + 1;
        let mut flags = Vec::new();
        let base = ChatRequest::new(self.backend_id.clone(), &["reflect"])
            .tag(format!("task:{}", task.task_id))
            .message(Role::User, self.reflection_prompt(task, trajectory, doc));

        let mut request = base;
        let mut applied: Option<(SkillDocument, Vec<UpdateOp>, String)> = None;
        for attempt in 0..=self.options.reflection_retry {
            let reply = match self.gateway.complete(&request) {
                Ok(r) => r,
                Err(crate::gateway::GatewayError::Audit(v)) => return Err(v.into()),
                Err(e) => {
                    flags.push(format!("reflection_gateway_error: {e}"));
                    break;
                }
            };
            let problem = match parse_update_ops(&reply, &task.commit_id, step) {
                Ok(parsed) => {
                    for w in &parsed.warnings {
                        flags.push(format!("reflection_warning: {w}"));
                    }
                    let summary = gap_summary_of(&reply);
                    if parsed.ops.is_empty() {
                        applied = Some((advance_empty(doc, &task.commit_id), vec![], summary));
                        break;
                    }
                    match apply_update(doc, parsed.ops.clone()) {
                        Ok(next) => {
                            applied = Some((next, parsed.ops, summary));
                            break;
                        }
                        Err(e) => format!("ops rejected: {e}"),
                    }
                }
                Err(e) => e.to_string(),
            };
            if attempt < self.options.reflection_retry {
                request = request.message(Role::Assistant, reply).message(
                    Role::User,
                    format!("{problem}. Reply again following the required format."),
                );
            } else {
                flags.push(format!("reflection_unparseable: {problem}"));
            }
        }

        let (next_doc, ops, gap_summary) = applied.unwrap_or_else(|| {
            // Degradation path: version still increments, entries unchanged.
            (advance_empty(doc, &task.commit_id), vec![], String::new())
        });

        let record = ReflectionRecord {
            task_id: task.task_id.clone(),
            attempt_patch: trajectory.final_patch.clone(),
            oracle_patch: task.oracle_patch.clone(),
            gap_summary,
            ops_applied: ops,
            attempt_steps: trajectory.steps,
            doc_version_before: doc.version,
            doc_version_after: next_doc.version,
            flags,
        };
        let dir = runstore::learn_task_dir(&self.out_dir, &self.run_id, &task.task_id);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(
            dir.join("reflection.json"),
            serde_json::to_string_pretty(&record)?,
        )?;
        Ok((next_doc, record))
    }

    /// Sequential mode: thread one document through the tasks in
    /// chronological order. A failed task is skipped (version still
    /// advances) — one bad task never aborts the run.
    pub fn run_sequential(
        &self,
        tasks: &[&TaskSpec],
        scope: &str,
        summary: &mut LearnSummary,
    ) -> Result<SkillDocument> {
        let scope_dir = memstore::scope_dir(&self.out_dir, &self.run_id, scope);
        let mut doc = empty_document();
        memstore::persist_doc_version(&scope_dir, &doc)?;
        for task in tasks {
            let next = match self.blind_attempt(task, &doc) {
                Ok(trajectory) => match self.reflect_and_update(task, &trajectory, &doc) {
                    Ok((next, record)) => {
                        if !record.flags.is_empty() {
                            summary.flagged_tasks.push(task.task_id.clone());
                        }
                        next
                    }
                    Err(e) => return Err(e), // audit violations abort
                },
                Err(e) => {
                    if crate::gateway::is_audit_violation(&e) {
                        return Err(e);
                    }
                    summary.flagged_tasks.push(task.task_id.clone());
                    advance_empty(&doc, &task.commit_id)
                }
            };
            let batch = next.update_log.last().expect("every step logs a batch");
            memstore::append_log_batch(&scope_dir, batch)?;
            memstore::persist_doc_version(&scope_dir, &next)?;
            doc = next;
        }
        Ok(doc)
    }

    /// Parallel mode: one shard per commit, each learning from the empty
    /// document; shard documents merge pairwise in a balanced tree. A
    /// failed shard contributes the empty document.
    pub fn run_parallel(
        &self,
        tasks: &[&TaskSpec],
        scope: &str,
        summary: &mut LearnSummary,
    ) -> Result<SkillDocument> {
        let scope_dir = memstore::scope_dir(&self.out_dir, &self.run_id, scope);
        let flagged: Mutex<Vec<String>> = Mutex::new(Vec::new());
        let audit_failure: Mutex<Option<anyhow::Error>> = Mutex::new(None);

        let mut shard_docs: Vec<SkillDocument> = Vec::with_capacity(tasks.len());
        std::thread::scope(|scope_| {
            let mut handles = Vec::new();
            for task in tasks {
                let flagged = &flagged;
                let audit_failure = &audit_failure;
                handles.push(scope_.spawn(move || {
                    let empty = empty_document();
                    match self.blind_attempt(task, &empty) {
                        Ok(trajectory) => {
                            match self.reflect_and_update(task, &trajectory, &empty) {
                                Ok((doc, record)) => {
                                    if !record.flags.is_empty() {
                                        flagged.lock().unwrap().push(task.task_id.clone());
                                    }
                                    doc
                                }
                                Err(e) => {
                                    *audit_failure.lock().unwrap() = Some(e);
                                    empty_document()
                                }
                            }
                        }
                        Err(e) => {
                            if crate::gateway::is_audit_violation(&e) {
                                *audit_failure.lock().unwrap() = Some(e);
                            } else {
                                flagged.lock().unwrap().push(task.task_id.clone());
                            }
                            empty_document()
                        }
                    }
                }));
            }
            for handle in handles {
                shard_docs.push(handle.join().expect("shard thread panicked"));
            }
        });
        if let Some(e) = audit_failure.into_inner().unwrap() {
            return Err(e);
        }
        summary.flagged_tasks.extend(flagged.into_inner().unwrap());

        // Persist shard documents for auditability before merging.
        let shards_dir = scope_dir.join("shards");
        std::fs::create_dir_all(&shards_dir)?;
        for (task, doc) in tasks.iter().zip(&shard_docs) {
            std::fs::write(
                shards_dir.join(format!("{}.json", task.task_id)),
                memstore::doc_bytes(doc),
            )?;
        }

        let merged = self.merge_tree(shard_docs, summary)?;
        if let Some(batch) = merged.update_log.last() {
            memstore::append_log_batch(&scope_dir, batch)?;
        }
        memstore::persist_doc_version(&scope_dir, &merged)?;
        Ok(merged)
    }

    /// Balanced pairwise merge over shard documents in curriculum order.
    fn merge_tree(
        &self,
        mut docs: Vec<SkillDocument>,
        summary: &mut LearnSummary,
    ) -> Result<SkillDocument> {
        if docs.is_empty() {
            return Ok(empty_document());
        }
        while docs.len() > 1 {
            let mut next = Vec::with_capacity(docs.len() / 2 + 1);
            let mut iter = docs.into_iter();
            while let Some(a) = iter.next() {
                match iter.next() {
                    Some(b) => next.push(self.merge_documents(a, b, summary)?),
                    None => next.push(a),
                }
            }
            docs = next;
        }
        Ok(docs.pop().unwrap())
    }

    /// Gateway-mediated deduplicating merge. Double parse failure falls
    /// back to concatenation without dedup (flagged).
    pub fn merge_documents(
        &self,
        a: SkillDocument,
        b: SkillDocument,
        summary: &mut LearnSummary,
    ) -> Result<SkillDocument> {
        if b.entries.is_empty() {
            return Ok(a);
        }
        if a.entries.is_empty() {
            return Ok(b);
        }
        let listing = |doc: &SkillDocument, side: &str| -> String {
            doc.entries
                .iter()
                .map(|e| format!("{side}:{} — {} :: {}\n", e.skill_id, e.title, e.body))
                .collect()
        };
        let prompt = format!(
            "Two skill lists were learned from disjoint commits. Identify pairs that capture \
             the same pattern. Reply with a fenced json block:\n\
             {{\"duplicates\": [[\"<id from list A>\", \"<id from list B>\"]]}}\n\
             Use [] when nothing is duplicated.\n\nList A:\n{}\nList B:\n{}",
            listing(&a, "A"),
            listing(&b, "B"),
        );
        let base = ChatRequest::new(self.backend_id.clone(), &["merge"]).message(Role::User, prompt);

        // One retry on failure of either kind; a double failure falls back
        // to concatenation without dedup (flagged).
        let mut pairs: Option<Vec<(String, String)>> = None;
        let mut request = base;
        for attempt in 0..2 {
            match self.gateway.complete(&request) {
                Ok(reply) => match parse_duplicate_pairs(&reply) {
                    Ok(parsed) => {
                        pairs = Some(parsed);
                        break;
                    }
                    Err(problem) if attempt == 0 => {
                        request = request.message(Role::Assistant, reply).message(
                            Role::User,
                            format!("{problem}. Reply with the documented json shape."),
                        );
                    }
                    Err(_) => break,
                },
                Err(crate::gateway::GatewayError::Audit(v)) => return Err(v.into()),
                Err(_) => continue,
            }
        }
        let pairs = match pairs {
            Some(p) => p,
            None => {
                summary.merge_fallbacks += 1;
                Vec::new()
            }
        };
        Ok(merge_with_verdicts(&a, &b, &pairs))
    }

    /// Runs the full learning phase for one condition over the learn pool.
    pub fn learn(
        &self,
        learn_tasks: &[&TaskSpec],
        condition: LearnCondition,
    ) -> Result<LearnSummary> {
        let mut summary = LearnSummary::default();
        let scopes: Vec<(String, Vec<&TaskSpec>)> = match condition.assignment {
            Assignment::All => vec![("all".to_string(), learn_tasks.to_vec())],
            Assignment::ByCategory => {
                let mut by_cat: BTreeMap<String, Vec<&TaskSpec>> = BTreeMap::new();
                for task in learn_tasks {
                    by_cat
                        .entry(scope_name(Assignment::ByCategory, &task.category))
                        .or_default()
                        .push(task);
                }
                by_cat.into_iter().collect()
            }
        };
        for (scope, tasks) in scopes {
            let doc = match condition.mode {
                LearnMode::Sequential => self.run_sequential(&tasks, &scope, &mut summary)?,
                LearnMode::Parallel => self.run_parallel(&tasks, &scope, &mut summary)?,
            };
            summary.scopes.insert(scope, doc.version);
        }
        Ok(summary)
    }
}

fn gap_summary_of(reply: &str) -> String {
    let before_block = reply.split("```").next().unwrap_or("").trim();
    before_block.to_string()
}

fn parse_duplicate_pairs(reply: &str) -> Result<Vec<(String, String)>, String> {
    let value = crate::miner::extract_json_object(reply).ok_or("no json object found")?;
    let list = value
        .get("duplicates")
        .and_then(|v| v.as_array())
        .ok_or("missing duplicates array")?;
    let mut pairs = Vec::new();
    for item in list {
        let pair = item.as_array().filter(|a| a.len() == 2).ok_or("pair must have two ids")?;
        let a = pair[0].as_str().ok_or("ids must be strings")?;
        let b = pair[1].as_str().ok_or("ids must be strings")?;
        let strip = |s: &str| s.trim_start_matches("A:").trim_start_matches("B:").to_string();
        pairs.push((strip(a), strip(b)));
    }
    Ok(pairs)
}
