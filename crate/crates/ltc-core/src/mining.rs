//! Commit records, the category taxonomy, task specs, and the pure
//! prefilter rules of the dataset-construction pipeline.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::diff::{file_set, patch_size, Patch};

/// The label every unknown or degenerate category falls back to.
pub const OTHER_CATEGORY: &str = "other";

/// Assessment state of a mined commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Quality {
    Unassessed,
    RejectedPrefilter { reason: String },
    RejectedLlm { rationale: String },
    Accepted { rationale: String },
}

impl Quality {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Quality::Accepted { .. })
    }
}

/// One mined non-merge commit. `parent_id` names the snapshot the patch
/// applies cleanly to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub commit_id: String,
    pub parent_id: String,
    pub author_time: i64,
    pub message: String,
    pub patch: Patch,
    pub diff_token_estimate: u64,
    pub quality: Quality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl CommitRecord {
    pub fn modified_lines(&self) -> u64 {
        patch_size(&self.patch)
    }
}

/// Byte-based token proxy: ceil(bytes / divisor). Model-agnostic by
/// design; the divisor is configurable.
pub fn estimate_tokens(byte_len: usize, divisor: u32) -> u64 {
    let d = divisor.max(1) as u64;
    (byte_len as u64).div_ceil(d)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefilterConfig {
    /// Commits with fewer total modified lines are trivial.
    pub min_modified_lines: u64,
    /// Commits whose diff token estimate exceeds this are excluded.
    pub token_limit: u64,
    /// Filename patterns ('*' wildcards) of dependency/version manifests.
    pub version_manifest_globs: Vec<String>,
    /// Version-bump heuristic also requires total modified lines at or
    /// below this bound.
    pub version_bump_max_lines: u64,
}

impl Default for PrefilterConfig {
    fn default() -> Self {
        PrefilterConfig {
            min_modified_lines: 10,
            token_limit: 180_000,
            version_manifest_globs: [
                "Cargo.toml",
                "Cargo.lock",
                "package.json",
                "package-lock.json",
                "yarn.lock",
                "pnpm-lock.yaml",
                "pyproject.toml",
                "setup.py",
                "setup.cfg",
                "requirements*.txt",
                "Pipfile.lock",
                "poetry.lock",
                "go.mod",
                "go.sum",
                "Gemfile.lock",
                "pom.xml",
                "VERSION",
                "version.txt",
                "*.version",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            version_bump_max_lines: 20,
        }
    }
}

/// Pure classification of one unassessed record against the prefilter
/// rules. Rule order (and therefore the reported reason) is: minimum
/// lines, version bump, token limit.
pub fn prefilter(record: CommitRecord, rules: &PrefilterConfig) -> CommitRecord {
    debug_assert!(matches!(record.quality, Quality::Unassessed));
    let reason = prefilter_reason(&record, rules);
    match reason {
        Some(reason) => CommitRecord {
            quality: Quality::RejectedPrefilter {
                reason: reason.to_string(),
            },
            ..record
        },
        None => record,
    }
}

fn prefilter_reason(record: &CommitRecord, rules: &PrefilterConfig) -> Option<&'static str> {
    let lines = record.modified_lines();
    if lines < rules.min_modified_lines {
        return Some("min_lines");
    }
    if is_version_bump(&record.patch, rules) {
        return Some("version_bump");
    }
    if record.diff_token_estimate > rules.token_limit {
        return Some("token_limit");
    }
    None
}

/// A commit is a version bump when every touched file is a
/// dependency/version manifest and the total change is small.
fn is_version_bump(patch: &Patch, rules: &PrefilterConfig) -> bool {
    let files = file_set(patch);
    if files.is_empty() || patch_size(patch) > rules.version_bump_max_lines {
        return false;
    }
    files.iter().all(|path| {
        rules
            .version_manifest_globs
            .iter()
            .any(|g| glob_matches(g, path))
    })
}

/// Minimal glob match: `*` matches any run of characters. Patterns
/// without `/` are matched against the basename.
pub fn glob_matches(pattern: &str, path: &str) -> bool {
    let candidate = if pattern.contains('/') {
        path
    } else {
        path.rsplit('/').next().unwrap_or(path)
    };
    wildcard_match(pattern, candidate)
}

fn wildcard_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    // Classic two-pointer '*' backtracking.
    let (mut pi, mut ti) = (0usize, 0usize);
    let (mut star, mut mark) = (usize::MAX, 0usize);
    while ti < t.len() {
        if pi < p.len() && (p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = pi;
            mark = ti;
            pi += 1;
        } else if star != usize::MAX {
            pi = star + 1;
            mark += 1;
            ti = mark;
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == '*' {
        pi += 1;
    }
    pi == p.len()
}

// ── Taxonomy ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub label: String,
    pub description: String,
    pub exemplar_rationales: Vec<String>,
}

/// The ordered development-category taxonomy produced by clustering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTaxonomy {
    pub categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaxonomyError {
    Empty,
    DuplicateLabel(String),
    EmptyLabel,
    NoExemplar(String),
}

impl fmt::Display for TaxonomyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaxonomyError::Empty => write!(f, "taxonomy has no categories"),
            TaxonomyError::DuplicateLabel(l) => write!(f, "duplicate category label {l:?}"),
            TaxonomyError::EmptyLabel => write!(f, "category with empty label"),
            TaxonomyError::NoExemplar(l) => {
                write!(f, "category {l:?} has no exemplar rationale")
            }
        }
    }
}

impl core::error::Error for TaxonomyError {}

impl CategoryTaxonomy {
    pub fn validate(&self) -> Result<(), TaxonomyError> {
        if self.categories.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for c in &self.categories {
            if c.label.trim().is_empty() {
                return Err(TaxonomyError::EmptyLabel);
            }
            if !seen.insert(c.label.as_str()) {
                return Err(TaxonomyError::DuplicateLabel(c.label.clone()));
            }
            if c.exemplar_rationales.is_empty() {
                return Err(TaxonomyError::NoExemplar(c.label.clone()));
            }
        }
        Ok(())
    }

    pub fn contains(&self, label: &str) -> bool {
        self.categories.iter().any(|c| c.label == label)
    }

    pub fn labels(&self) -> Vec<&str> {
        self.categories.iter().map(|c| c.label.as_str()).collect()
    }
}

// ── Task specs ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pool {
    Learn,
    Test,
}

/// A learn or test task: the synthetic issue description plus references
/// to the snapshot and the oracle patch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub commit_id: String,
    pub pool: Pool,
    pub category: String,
    pub query: String,
    /// Parent commit the task's worktree is checked out at.
    pub snapshot_ref: String,
    pub oracle_patch: Patch,
}
