//! The agent tool surface: read_file, search, list_dir, edit_file, finish.
//!
//! Every path argument is resolved inside the task worktree; escapes (and
//! the `.git` dir) are hard failures. edit_file is exact-anchor
//! replacement and refuses ambiguous anchors, so an agent's own earlier
//! edits cannot silently misdirect later ones.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

const DEFAULT_READ_LINES: usize = 200;
const MAX_SEARCH_MATCHES: usize = 50;
const MAX_SEARCHED_FILE_BYTES: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "tool", content = "args", rename_all = "snake_case")]
pub enum ToolRequest {
    ReadFile {
        path: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start_line: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_lines: Option<usize>,
    },
    Search {
        query: String,
        #[serde(default)]
        regex: bool,
    },
    ListDir {
        path: String,
    },
    EditFile {
        path: String,
        find: String,
        replace: String,
    },
    Finish {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        summary: Option<String>,
    },
}

impl ToolRequest {
    pub fn tool_name(&self) -> &'static str {
        match self {
            ToolRequest::ReadFile { .. } => "read_file",
            ToolRequest::Search { .. } => "search",
            ToolRequest::ListDir { .. } => "list_dir",
            ToolRequest::EditFile { .. } => "edit_file",
            ToolRequest::Finish { .. } => "finish",
        }
    }

    pub fn args_json(&self) -> String {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(map)) => map
                .get("args")
                .map(|v| v.to_string())
                .unwrap_or_else(|| "{}".to_string()),
            _ => "{}".to_string(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("path {path:?} escapes the task worktree")]
    PathEscape { path: String },
    #[error("path {path:?} does not exist")]
    NotFound { path: String },
    #[error("anchor not found in {path:?}")]
    AnchorNotFound { path: String },
    #[error("anchor is ambiguous in {path:?} ({sites} sites); no change made")]
    AmbiguousAnchor { path: String, sites: usize },
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error("io error on {path:?}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Resolves a repo-relative path inside the worktree. Absolute paths,
/// `..` traversal, and `.git` components are escapes.
pub fn resolve_sandboxed(root: &Path, raw: &str) -> Result<PathBuf, ToolError> {
    let escape = || ToolError::PathEscape {
        path: raw.to_string(),
    };
    if raw.contains('\0') {
        return Err(escape());
    }
    let rel = Path::new(raw);
    if rel.is_absolute() {
        return Err(escape());
    }
    for component in rel.components() {
        use std::path::Component::*;
        match component {
            Normal(part) => {
                if part == ".git" {
                    return Err(escape());
                }
            }
            CurDir => {}
            ParentDir | RootDir | Prefix(_) => return Err(escape()),
        }
    }
    let joined = root.join(rel);
    // Symlinked escapes: verify the deepest existing ancestor still lives
    // under the (canonical) root.
    if let Ok(root_canon) = root.canonicalize() {
        let mut probe = joined.clone();
        loop {
            if probe.exists() {
                let canon = probe.canonicalize().map_err(|source| ToolError::Io {
                    path: raw.to_string(),
                    source,
                })?;
                if !canon.starts_with(&root_canon) {
                    return Err(escape());
                }
                break;
            }
            match probe.parent() {
                Some(parent) if parent.starts_with(root) => probe = parent.to_path_buf(),
                _ => break,
            }
        }
    }
    Ok(joined)
}

/// Executes one tool against the worktree, returning the text fed back to
/// the agent. `Finish` is handled by the loop, not here.
pub fn execute(root: &Path, request: &ToolRequest) -> Result<String, ToolError> {
    match request {
        ToolRequest::ReadFile {
            path,
            start_line,
            max_lines,
        } => read_file(root, path, start_line.unwrap_or(1), max_lines.unwrap_or(DEFAULT_READ_LINES)),
        ToolRequest::Search { query, regex } => search(root, query, *regex),
        ToolRequest::ListDir { path } => list_dir(root, path),
        ToolRequest::EditFile {
            path,
            find,
            replace,
        } => edit_file(root, path, find, replace),
        ToolRequest::Finish { summary } => Ok(summary.clone().unwrap_or_default()),
    }
}

fn read_file(root: &Path, raw: &str, start_line: usize, max_lines: usize) -> Result<String, ToolError> {
    let path = resolve_sandboxed(root, raw)?;
    if !path.is_file() {
        return Err(ToolError::NotFound {
            path: raw.to_string(),
        });
    }
    let content = std::fs::read_to_string(&path).map_err(|source| ToolError::Io {
        path: raw.to_string(),
        source,
    })?;
    let start = start_line.max(1);
    let max = max_lines.clamp(1, 2000);
    let lines: Vec<&str> = content.lines().collect();
    let total = lines.len();
    let slice: Vec<String> = lines
        .iter()
        .enumerate()
        .skip(start - 1)
        .take(max)
        .map(|(i, l)| format!("{}| {}", i + 1, l))
        .collect();
    let mut out = slice.join("\n");
    let end = (start - 1 + max).min(total);
    if end < total {
        out.push_str(&format!("\n… ({} more lines)", total - end));
    }
    if out.is_empty() {
        out = "(empty file)".to_string();
    }
    Ok(out)
}

fn search(root: &Path, query: &str, use_regex: bool) -> Result<String, ToolError> {
    if query.is_empty() {
        return Err(ToolError::BadArgs("search query is empty".into()));
    }
    let pattern = if use_regex {
        Some(regex::Regex::new(query).map_err(|e| ToolError::BadArgs(e.to_string()))?)
    } else {
        None
    };
    let mut matches = Vec::new();
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(root)
        .into_iter()
        .filter_entry(|e| e.file_name() != ".git")
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .filter(|e| e.metadata().map(|m| m.len() <= MAX_SEARCHED_FILE_BYTES).unwrap_or(false))
        .map(|e| e.into_path())
        .collect();
    files.sort();
    'outer: for file in files {
        let Ok(content) = std::fs::read_to_string(&file) else {
            continue; // binary or non-utf8
        };
        let rel = file.strip_prefix(root).unwrap_or(&file).to_string_lossy().into_owned();
        for (no, line) in content.lines().enumerate() {
            let hit = match &pattern {
                Some(re) => re.is_match(line),
                None => line.contains(query),
            };
            if hit {
                matches.push(format!("{rel}:{}: {}", no + 1, line.trim_end()));
                if matches.len() >= MAX_SEARCH_MATCHES {
                    matches.push(format!("… capped at {MAX_SEARCH_MATCHES} matches"));
                    break 'outer;
                }
            }
        }
    }
    if matches.is_empty() {
        Ok("(no matches)".to_string())
    } else {
        Ok(matches.join("\n"))
    }
}

fn list_dir(root: &Path, raw: &str) -> Result<String, ToolError> {
    let raw = if raw.is_empty() { "." } else { raw };
    let path = resolve_sandboxed(root, raw)?;
    if !path.is_dir() {
        return Err(ToolError::NotFound {
            path: raw.to_string(),
        });
    }
    let mut names = Vec::new();
    for entry in std::fs::read_dir(&path).map_err(|source| ToolError::Io {
        path: raw.to_string(),
        source,
    })? {
        let entry = entry.map_err(|source| ToolError::Io {
            path: raw.to_string(),
            source,
        })?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name == ".git" {
            continue;
        }
        if entry.path().is_dir() {
            names.push(format!("{name}/"));
        } else {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        Ok("(empty directory)".to_string())
    } else {
        Ok(names.join("\n"))
    }
}

fn edit_file(root: &Path, raw: &str, find: &str, replace: &str) -> Result<String, ToolError> {
    if find.is_empty() {
        return Err(ToolError::BadArgs("edit_file needs a nonempty find anchor".into()));
    }
    let path = resolve_sandboxed(root, raw)?;
    if !path.is_file() {
        return Err(ToolError::NotFound {
            path: raw.to_string(),
        });
    }
    let content = std::fs::read_to_string(&path).map_err(|source| ToolError::Io {
        path: raw.to_string(),
        source,
    })?;
    let sites = content.matches(find).count();
    match sites {
        0 => Err(ToolError::AnchorNotFound {
            path: raw.to_string(),
        }),
        1 => {
            let updated = content.replacen(find, replace, 1);
            std::fs::write(&path, updated).map_err(|source| ToolError::Io {
                path: raw.to_string(),
                source,
            })?;
            Ok(format!("Applied edit to {raw} (1 site)"))
        }
        n => Err(ToolError::AmbiguousAnchor {
            path: raw.to_string(),
            sites: n,
        }),
    }
}

/// Parses the fenced tool block out of a model reply.
pub fn parse_tool_reply(reply: &str) -> Result<ToolRequest, String> {
    let block = ltc_core::skills::fenced_block(reply, "tool")
        .or_else(|| ltc_core::skills::fenced_block(reply, "json"))
        .map(str::trim)
        .or_else(|| {
            let t = reply.trim();
            t.starts_with('{').then_some(t)
        })
        .ok_or_else(|| "reply carries no ```tool block".to_string())?;
    serde_json::from_str(block).map_err(|e| format!("tool block does not parse: {e}"))
}
