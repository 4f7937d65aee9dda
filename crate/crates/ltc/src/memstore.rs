//! On-disk form of skill documents: one snapshot per version
//! (`doc_v<t>.json`) plus an append-only `log.jsonl` with one update op
//! per line. Replaying the log from the empty document must reproduce the
//! final snapshot byte for byte; `ltc replay` exposes that check.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ltc_core::skills::{
    self, BatchKind, OpAction, OpPayload, SkillDocument, UpdateBatch, UpdateOp,
};

/// One log.jsonl line: an update op annotated with its batch, or an
/// explicit no-op marker for batches that consumed a commit without
/// producing ops (the version still increments).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogLine {
    pub op: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub skill_id: String,
    #[serde(default, skip_serializing_if = "payload_is_empty")]
    pub payload: OpPayload,
    pub source_commit: String,
    pub step: u32,
    pub batch_kind: BatchKind,
    pub batch_source: String,
}

fn payload_is_empty(p: &OpPayload) -> bool {
    *p == OpPayload::default()
}

fn action_name(action: OpAction) -> &'static str {
    match action {
        OpAction::Create => "create",
        OpAction::Revise => "revise",
        OpAction::Deprecate => "deprecate",
    }
}

fn parse_action(name: &str) -> Result<OpAction> {
    match name {
        "create" => Ok(OpAction::Create),
        "revise" => Ok(OpAction::Revise),
        "deprecate" => Ok(OpAction::Deprecate),
        other => bail!("unknown op {other:?} in log"),
    }
}

pub fn scope_dir(out_dir: &Path, run_id: &str, scope: &str) -> PathBuf {
    out_dir.join("memory").join(run_id).join(scope)
}

fn doc_path(dir: &Path, version: u32) -> PathBuf {
    dir.join(format!("doc_v{version}.json"))
}

pub fn doc_bytes(doc: &SkillDocument) -> String {
    serde_json::to_string_pretty(doc).expect("document serializes")
}

/// Writes the snapshot for the document's current version.
pub fn persist_doc_version(dir: &Path, doc: &SkillDocument) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(doc_path(dir, doc.version), doc_bytes(doc))?;
    Ok(())
}

/// Appends one batch to log.jsonl (a no-op line for empty batches).
pub fn append_log_batch(dir: &Path, batch: &UpdateBatch) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut lines = String::new();
    if batch.ops.is_empty() {
        let line = LogLine {
            op: "noop".to_string(),
            skill_id: String::new(),
            payload: OpPayload::default(),
            source_commit: batch.source.clone(),
            step: batch.step,
            batch_kind: batch.kind,
            batch_source: batch.source.clone(),
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    } else {
        for op in &batch.ops {
            let line = LogLine {
                op: action_name(op.op).to_string(),
                skill_id: op.skill_id.clone(),
                payload: op.payload.clone(),
                source_commit: op.source_commit.clone(),
                step: op.step,
                batch_kind: batch.kind,
                batch_source: batch.source.clone(),
            };
            lines.push_str(&serde_json::to_string(&line)?);
            lines.push('\n');
        }
    }
    use std::io::Write;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join("log.jsonl"))?;
    file.write_all(lines.as_bytes())?;
    Ok(())
}

/// Reads log.jsonl back into ordered batches, grouping lines by step.
pub fn load_log(dir: &Path) -> Result<Vec<UpdateBatch>> {
    let path = dir.join("log.jsonl");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("no update log at {}", path.display()))?;
    let mut batches: Vec<UpdateBatch> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(line)
            .with_context(|| format!("bad log line {}", no + 1))?;
        let need_new = batches.last().is_none_or(|b| b.step != parsed.step);
        if need_new {
            batches.push(UpdateBatch {
                step: parsed.step,
                source: parsed.batch_source.clone(),
                kind: parsed.batch_kind,
                ops: Vec::new(),
            });
        }
        if parsed.op != "noop" {
            let batch = batches.last_mut().unwrap();
            batch.ops.push(UpdateOp {
                op: parse_action(&parsed.op)?,
                skill_id: parsed.skill_id,
                payload: parsed.payload,
                source_commit: parsed.source_commit,
                step: parsed.step,
            });
        }
    }
    Ok(batches)
}

/// Highest persisted version in a scope directory.
pub fn final_version(dir: &Path) -> Result<u32> {
    let mut max: Option<u32> = None;
    for entry in std::fs::read_dir(dir)
        .with_context(|| format!("no memory scope at {}", dir.display()))?
    {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(v) = name
            .strip_prefix("doc_v")
            .and_then(|r| r.strip_suffix(".json"))
            .and_then(|n| n.parse::<u32>().ok())
        {
            max = Some(max.map_or(v, |m| m.max(v)));
        }
    }
    max.with_context(|| format!("{} holds no doc_v*.json snapshots", dir.display()))
}

/// Loads a snapshot. The returned document carries no log (snapshots and
/// the log are persisted separately).
pub fn load_doc(dir: &Path, version: u32) -> Result<SkillDocument> {
    let path = doc_path(dir, version);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("no snapshot at {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}

pub struct ReplayCheck {
    pub scope: String,
    pub final_version: u32,
    pub stored_bytes: String,
    pub replayed_bytes: String,
}

impl ReplayCheck {
    pub fn matches(&self) -> bool {
        self.stored_bytes == self.replayed_bytes
    }
}

/// Replays a scope's log from the empty document and compares the result
/// byte-for-byte against the stored final snapshot. A version-0 scope
/// (every shard failed) legitimately has no log.
pub fn replay_scope(dir: &Path, scope_name: &str) -> Result<ReplayCheck> {
    let version = final_version(dir)?;
    let stored_bytes = std::fs::read_to_string(doc_path(dir, version))?;
    let log = if version == 0 && !dir.join("log.jsonl").exists() {
        Vec::new()
    } else {
        load_log(dir)?
    };
    let replayed = skills::replay(&log).map_err(|e| anyhow::anyhow!("replay failed: {e}"))?;
    Ok(ReplayCheck {
        scope: scope_name.to_string(),
        final_version: version,
        stored_bytes,
        replayed_bytes: doc_bytes(&replayed),
    })
}

/// Scope directories of a learn run (e.g. `all` or `cat-<label>`).
pub fn list_scopes(out_dir: &Path, run_id: &str) -> Result<Vec<String>> {
    let root = out_dir.join("memory").join(run_id);
    let mut scopes = Vec::new();
    for entry in std::fs::read_dir(&root)
        .with_context(|| format!("no memory directory at {}", root.display()))?
    {
        let entry = entry?;
        if entry.path().is_dir() {
            scopes.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    scopes.sort();
    Ok(scopes)
}
