//! Unified-diff model: parsing, serialization, measurement, and in-memory
//! application.
//!
//! The parser accepts git-flavor unified diffs (plain `---`/`+++` diffs are
//! tolerated too) and preserves every header and body line verbatim, so
//! serializing a parsed patch reproduces the input bytes. Application is
//! exact-context only: a hunk either matches the target lines at its stated
//! position or the whole patch is rejected with a structured conflict report.

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// How a single file changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Modify,
    Add,
    Delete,
    Rename,
    ModeOnly,
    Binary,
}

/// One `@@` hunk. Header and body lines are kept verbatim (including the
/// leading `+`/`-`/` `/`\` marker characters) so reserialization is
/// byte-exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hunk {
    pub old_start: u64,
    pub old_len: u64,
    pub new_start: u64,
    pub new_len: u64,
    /// The verbatim `@@ ... @@ <context>` line.
    pub header: String,
    /// Verbatim body lines, prefix characters included.
    pub lines: Vec<String>,
}

impl Hunk {
    /// Body lines that belong to the old side (context + deletions), with
    /// the prefix character stripped.
    pub fn old_lines(&self) -> impl Iterator<Item = &str> {
        self.lines
            .iter()
            .filter(|l| !l.starts_with('+') && !l.starts_with('\\'))
            .map(|l| body_of(l))
    }

    /// Body lines that belong to the new side (context + additions), with
    /// the prefix character stripped.
    pub fn new_lines(&self) -> impl Iterator<Item = &str> {
        self.lines
            .iter()
            .filter(|l| !l.starts_with('-') && !l.starts_with('\\'))
            .map(|l| body_of(l))
    }

    /// Added body lines only, prefix stripped.
    pub fn added_lines(&self) -> impl Iterator<Item = &str> {
        self.lines
            .iter()
            .filter(|l| l.starts_with('+'))
            .map(|l| body_of(l))
    }
}

/// Content of a body line without its one-character prefix. An entirely
/// empty line (emitted by some tools for blank context) maps to "".
fn body_of(line: &str) -> &str {
    if line.is_empty() {
        ""
    } else {
        &line[1..]
    }
}

/// Per-file portion of a patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilePatch {
    pub old_path: Option<String>,
    pub new_path: Option<String>,
    pub change_kind: ChangeKind,
    pub hunks: Vec<Hunk>,
    pub added_lines: u64,
    pub deleted_lines: u64,
    pub old_mode: Option<String>,
    pub new_mode: Option<String>,
    /// Verbatim header lines (everything from `diff --git` or `---` up to
    /// the first hunk), preserved for byte-exact reserialization.
    pub header_lines: Vec<String>,
}

impl FilePatch {
    /// The path this file is addressed by after the change (falls back to
    /// the old path for deletions).
    pub fn effective_path(&self) -> Option<&str> {
        self.new_path.as_deref().or(self.old_path.as_deref())
    }

    pub fn is_binary(&self) -> bool {
        self.change_kind == ChangeKind::Binary
    }
}

/// A parsed unified diff.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Patch {
    pub files: Vec<FilePatch>,
    source_text: String,
    trailing_newline: bool,
}

impl Patch {
    /// The empty patch (no files, serializes to "").
    pub fn empty() -> Self {
        Patch::default()
    }

    /// Original text this patch was parsed from.
    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Reconstructs unified-diff text from the preserved header and body
    /// lines. For a parsed patch this equals the input bytes.
    pub fn to_unified(&self) -> String {
        let mut out = String::new();
        for file in &self.files {
            for line in &file.header_lines {
                out.push_str(line);
                out.push('\n');
            }
            for hunk in &file.hunks {
                out.push_str(&hunk.header);
                out.push('\n');
                for line in &hunk.lines {
                    out.push_str(line);
                    out.push('\n');
                }
            }
        }
        if !self.trailing_newline && out.ends_with('\n') {
            out.pop();
        }
        out
    }

    /// All added body lines across files, prefix stripped.
    pub fn added_line_contents(&self) -> impl Iterator<Item = &str> {
        self.files
            .iter()
            .flat_map(|f| f.hunks.iter().flat_map(|h| h.added_lines()))
    }

    pub fn has_binary_files(&self) -> bool {
        self.files.iter().any(|f| f.is_binary())
    }
}

// Patches cross module and process boundaries as unified-diff text; the
// parsed form is an implementation detail.
impl Serialize for Patch {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_unified())
    }
}

impl<'de> Deserialize<'de> for Patch {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_patch(&text).map_err(serde::de::Error::custom)
    }
}

// ── Parsing ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseError {
    /// A `@@` line whose numbers could not be read.
    MalformedHunkHeader { line: usize, text: String },
    /// A hunk body ended before its stated line counts were satisfied, or
    /// contained a line with an unknown prefix.
    TruncatedHunk { line: usize, text: String },
    /// A line at the top level that does not begin a file section.
    UnexpectedLine { line: usize, text: String },
    /// The same path appeared twice in the same role.
    DuplicatePath { path: String },
    /// A file section whose headers contradict each other.
    InconsistentFileHeader { line: usize, reason: String },
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseError::MalformedHunkHeader { line, text } => {
                write!(f, "malformed hunk header at line {line}: {text:?}")
            }
            ParseError::TruncatedHunk { line, text } => {
                write!(f, "truncated or malformed hunk at line {line}: {text:?}")
            }
            ParseError::UnexpectedLine { line, text } => {
                write!(f, "unexpected line {line} outside any file section: {text:?}")
            }
            ParseError::DuplicatePath { path } => {
                write!(f, "path {path:?} appears more than once in the same role")
            }
            ParseError::InconsistentFileHeader { line, reason } => {
                write!(f, "inconsistent file header near line {line}: {reason}")
            }
        }
    }
}

impl core::error::Error for ParseError {}

/// Parses unified-diff text (git flavor; plain diffs tolerated).
pub fn parse_patch(text: &str) -> Result<Patch, ParseError> {
    if text.trim().is_empty() {
        return Ok(Patch {
            files: Vec::new(),
            source_text: text.to_owned(),
            trailing_newline: text.ends_with('\n'),
        });
    }

    let trailing_newline = text.ends_with('\n');
    let mut lines: Vec<&str> = text.split('\n').collect();
    if trailing_newline {
        lines.pop();
    }

    let mut files = Vec::new();
    let mut i = 0usize;
    while i < lines.len() {
        let line = lines[i];
        if line.starts_with("diff --git ") || line.starts_with("--- ") {
            let file = parse_file_section(&lines, &mut i)?;
            files.push(file);
        } else {
            return Err(ParseError::UnexpectedLine {
                line: i + 1,
                text: line.to_string(),
            });
        }
    }

    check_unique_paths(&files)?;

    Ok(Patch {
        files,
        source_text: text.to_owned(),
        trailing_newline,
    })
}

fn check_unique_paths(files: &[FilePatch]) -> Result<(), ParseError> {
    let mut old_seen = BTreeSet::new();
    let mut new_seen = BTreeSet::new();
    for file in files {
        if let Some(p) = &file.old_path {
            if !old_seen.insert(p.clone()) {
                return Err(ParseError::DuplicatePath { path: p.clone() });
            }
        }
        if let Some(p) = &file.new_path {
            if !new_seen.insert(p.clone()) {
                return Err(ParseError::DuplicatePath { path: p.clone() });
            }
        }
    }
    Ok(())
}

/// Starts a new file section: either a `diff --git` line or, for plain
/// diffs, a `---` line.
fn starts_file_section(line: &str) -> bool {
    line.starts_with("diff --git ")
}

fn parse_file_section(lines: &[&str], i: &mut usize) -> Result<FilePatch, ParseError> {
    let section_start = *i;
    let is_git_section = lines[*i].starts_with("diff --git ");
    let mut header_lines: Vec<String> = Vec::new();

    // diff --git line, when present.
    let mut git_paths: Option<(String, String)> = None;
    if is_git_section {
        git_paths = split_git_diff_paths(lines[*i]);
        header_lines.push(lines[*i].to_string());
        *i += 1;
    }

    let mut minus_path: Option<String> = None;
    let mut plus_path: Option<String> = None;
    let mut rename_from: Option<String> = None;
    let mut rename_to: Option<String> = None;
    let mut old_mode: Option<String> = None;
    let mut new_mode: Option<String> = None;
    let mut is_add = false;
    let mut is_delete = false;
    let mut is_binary = false;
    let mut is_copy = false;

    // Header lines until the first hunk or the next section.
    while *i < lines.len() {
        let line = lines[*i];
        if line.starts_with("@@") {
            break;
        }
        if is_git_section && starts_file_section(line) {
            break;
        }
        if !is_git_section && line.starts_with("--- ") && minus_path.is_some() {
            // Next plain-diff section.
            break;
        }

        if let Some(rest) = line.strip_prefix("--- ") {
            minus_path = Some(clean_header_path(rest));
        } else if let Some(rest) = line.strip_prefix("+++ ") {
            plus_path = Some(clean_header_path(rest));
        } else if let Some(rest) = line.strip_prefix("rename from ") {
            rename_from = Some(unquote_path(rest));
        } else if let Some(rest) = line.strip_prefix("rename to ") {
            rename_to = Some(unquote_path(rest));
        } else if let Some(rest) = line.strip_prefix("copy from ") {
            rename_from = Some(unquote_path(rest));
            is_copy = true;
        } else if let Some(rest) = line.strip_prefix("copy to ") {
            rename_to = Some(unquote_path(rest));
            is_copy = true;
        } else if let Some(rest) = line.strip_prefix("old mode ") {
            old_mode = Some(rest.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("new mode ") {
            new_mode = Some(rest.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("new file mode ") {
            new_mode = Some(rest.trim().to_string());
            is_add = true;
        } else if let Some(rest) = line.strip_prefix("deleted file mode ") {
            old_mode = Some(rest.trim().to_string());
            is_delete = true;
        } else if line.starts_with("Binary files ") || line == "GIT binary patch" {
            is_binary = true;
            if line == "GIT binary patch" {
                header_lines.push(line.to_string());
                *i += 1;
                consume_binary_payload(lines, i, &mut header_lines);
                continue;
            }
        }
        // index lines, similarity scores, and anything unknown are kept
        // verbatim without interpretation.
        header_lines.push(line.to_string());
        *i += 1;
    }

    // Hunks.
    let mut hunks = Vec::new();
    while *i < lines.len() && lines[*i].starts_with("@@") {
        hunks.push(parse_hunk(lines, i)?);
    }

    let mut added_lines = 0u64;
    let mut deleted_lines = 0u64;
    for hunk in &hunks {
        for line in &hunk.lines {
            if line.starts_with('+') {
                added_lines += 1;
            } else if line.starts_with('-') {
                deleted_lines += 1;
            }
        }
    }

    // Resolve paths: ---/+++ lines are authoritative when present.
    let (git_old, git_new) = match git_paths {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };
    let old_path = minus_path
        .clone()
        .filter(|p| p != "/dev/null")
        .map(strip_diff_prefix)
        .or(rename_from.clone())
        .or_else(|| {
            if is_add {
                None
            } else {
                git_old.clone().map(strip_diff_prefix)
            }
        });
    let new_path = plus_path
        .clone()
        .filter(|p| p != "/dev/null")
        .map(strip_diff_prefix)
        .or(rename_to.clone())
        .or_else(|| {
            if is_delete {
                None
            } else {
                git_new.clone().map(strip_diff_prefix)
            }
        });

    let is_rename = rename_from.is_some() && rename_to.is_some() && !is_copy;
    let change_kind = if is_binary {
        ChangeKind::Binary
    } else if is_add {
        ChangeKind::Add
    } else if is_delete {
        ChangeKind::Delete
    } else if is_rename {
        ChangeKind::Rename
    } else if hunks.is_empty() && (old_mode.is_some() || new_mode.is_some()) {
        ChangeKind::ModeOnly
    } else {
        ChangeKind::Modify
    };

    match change_kind {
        ChangeKind::Add if old_path.is_some() => {
            return Err(ParseError::InconsistentFileHeader {
                line: section_start + 1,
                reason: "new file carries an old path".to_string(),
            });
        }
        ChangeKind::Delete if new_path.is_some() => {
            return Err(ParseError::InconsistentFileHeader {
                line: section_start + 1,
                reason: "deleted file carries a new path".to_string(),
            });
        }
        ChangeKind::Rename if old_path == new_path => {
            return Err(ParseError::InconsistentFileHeader {
                line: section_start + 1,
                reason: "rename with identical paths".to_string(),
            });
        }
        _ => {}
    }

    Ok(FilePatch {
        old_path,
        new_path,
        change_kind,
        hunks,
        added_lines,
        deleted_lines,
        old_mode,
        new_mode,
        header_lines,
    })
}

/// `GIT binary patch` payload: one or two `literal`/`delta` blocks, each a
/// run of base85 data lines terminated by an empty line. Preserved
/// verbatim, never decoded.
fn consume_binary_payload(lines: &[&str], i: &mut usize, header_lines: &mut Vec<String>) {
    let mut blocks = 0;
    while *i < lines.len() && blocks < 2 {
        let line = lines[*i];
        if !(line.starts_with("literal ") || line.starts_with("delta ")) {
            break;
        }
        header_lines.push(line.to_string());
        *i += 1;
        while *i < lines.len() && !lines[*i].is_empty() {
            header_lines.push(lines[*i].to_string());
            *i += 1;
        }
        if *i < lines.len() {
            header_lines.push(lines[*i].to_string()); // the blank terminator
            *i += 1;
        }
        blocks += 1;
    }
}

fn parse_hunk(lines: &[&str], i: &mut usize) -> Result<Hunk, ParseError> {
    let header_line_no = *i + 1;
    let header = lines[*i];
    let (old_start, old_len, new_start, new_len) =
        parse_hunk_header(header).ok_or_else(|| ParseError::MalformedHunkHeader {
            line: header_line_no,
            text: header.to_string(),
        })?;
    *i += 1;

    let mut body = Vec::new();
    let mut old_remaining = old_len;
    let mut new_remaining = new_len;
    while old_remaining > 0 || new_remaining > 0 {
        if *i >= lines.len() {
            return Err(ParseError::TruncatedHunk {
                line: *i,
                text: "<end of input>".to_string(),
            });
        }
        let line = lines[*i];
        let first = line.chars().next();
        match first {
            Some(' ') | None => {
                if old_remaining == 0 || new_remaining == 0 {
                    return Err(ParseError::TruncatedHunk {
                        line: *i + 1,
                        text: line.to_string(),
                    });
                }
                old_remaining -= 1;
                new_remaining -= 1;
            }
            Some('-') => {
                if old_remaining == 0 {
                    return Err(ParseError::TruncatedHunk {
                        line: *i + 1,
                        text: line.to_string(),
                    });
                }
                old_remaining -= 1;
            }
            Some('+') => {
                if new_remaining == 0 {
                    return Err(ParseError::TruncatedHunk {
                        line: *i + 1,
                        text: line.to_string(),
                    });
                }
                new_remaining -= 1;
            }
            Some('\\') => {
                // "\ No newline at end of file": counts toward neither side.
            }
            _ => {
                return Err(ParseError::TruncatedHunk {
                    line: *i + 1,
                    text: line.to_string(),
                });
            }
        }
        body.push(line.to_string());
        *i += 1;
    }
    // Trailing no-newline marker after the last counted line.
    if *i < lines.len() && lines[*i].starts_with('\\') {
        body.push(lines[*i].to_string());
        *i += 1;
    }

    Ok(Hunk {
        old_start,
        old_len,
        new_start,
        new_len,
        header: header.to_string(),
        lines: body,
    })
}

/// Parses `@@ -a[,b] +c[,d] @@ ...`; omitted lengths default to 1.
fn parse_hunk_header(line: &str) -> Option<(u64, u64, u64, u64)> {
    let rest = line.strip_prefix("@@ -")?;
    let (old_part, rest) = rest.split_once(" +")?;
    let plus_end = rest.find(" @@")?;
    let new_part = &rest[..plus_end];
    let (old_start, old_len) = parse_range(old_part)?;
    let (new_start, new_len) = parse_range(new_part)?;
    Some((old_start, old_len, new_start, new_len))
}

fn parse_range(part: &str) -> Option<(u64, u64)> {
    match part.split_once(',') {
        Some((s, l)) => Some((s.parse().ok()?, l.parse().ok()?)),
        None => Some((part.parse().ok()?, 1)),
    }
}

/// Strips an optional tab-separated timestamp (plain diffs) and unquotes.
fn clean_header_path(raw: &str) -> String {
    let raw = match raw.split_once('\t') {
        Some((p, _)) => p,
        None => raw,
    };
    unquote_path(raw)
}

/// Removes a leading `a/` or `b/` diff prefix and any leading `./`.
fn strip_diff_prefix(path: String) -> String {
    let stripped = path
        .strip_prefix("a/")
        .or_else(|| path.strip_prefix("b/"))
        .unwrap_or(&path);
    stripped.strip_prefix("./").unwrap_or(stripped).to_string()
}

/// Undoes git's C-style path quoting (`"a/with \"quotes\""`).
fn unquote_path(raw: &str) -> String {
    let raw = raw.trim_end_matches('\r');
    if !(raw.starts_with('"') && raw.ends_with('"') && raw.len() >= 2) {
        return raw.to_string();
    }
    let inner = &raw[1..raw.len() - 1];
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('"') => out.push('"'),
            Some('\\') => out.push('\\'),
            Some(d @ '0'..='7') => {
                // Up to three octal digits encode a raw byte.
                let mut val = d as u32 - '0' as u32;
                let mut taken = 1;
                let mut rest = chars.clone();
                while taken < 3 {
                    match rest.next() {
                        Some(d2 @ '0'..='7') => {
                            val = val * 8 + (d2 as u32 - '0' as u32);
                            chars = rest.clone();
                            taken += 1;
                        }
                        _ => break,
                    }
                }
                out.push(char::from_u32(val).unwrap_or('\u{fffd}'));
            }
            Some(other) => out.push(other),
            None => {}
        }
    }
    out
}

/// Splits the two paths of a `diff --git a/old b/new` line. Falls back to
/// the last ` b/` occurrence for unquoted paths containing spaces.
fn split_git_diff_paths(line: &str) -> Option<(String, String)> {
    let rest = line.strip_prefix("diff --git ")?;
    if rest.starts_with('"') {
        let (first, remainder) = take_quoted(rest)?;
        let second = remainder.trim_start();
        return Some((unquote_path(first), unquote_path(second)));
    }
    let idx = rest.rfind(" b/")?;
    let old = &rest[..idx];
    let new = &rest[idx + 1..];
    if !old.starts_with("a/") {
        return None;
    }
    Some((old.to_string(), new.to_string()))
}

/// Returns the quoted prefix of `s` (including quotes) and the remainder.
fn take_quoted(s: &str) -> Option<(&str, &str)> {
    debug_assert!(s.starts_with('"'));
    let bytes = s.as_bytes();
    let mut i = 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'"' => return Some((&s[..=i], &s[i + 1..])),
            _ => i += 1,
        }
    }
    None
}

// ── Measurement ─────────────────────────────────────────────────────────

/// The set of files a patch touches: union of all present old and new
/// paths, normalized (forward slashes, no leading `./`). Renames
/// contribute both members.
pub fn file_set(patch: &Patch) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for file in &patch.files {
        for path in [&file.old_path, &file.new_path].into_iter().flatten() {
            set.insert(normalize_path(path));
        }
    }
    set
}

fn normalize_path(path: &str) -> String {
    let p = path.replace('\\', "/");
    p.strip_prefix("./").unwrap_or(&p).to_string()
}

/// Total patch size in lines: additions + deletions over all files.
/// Binary files contribute 0 (they are flagged separately in reports).
pub fn patch_size(patch: &Patch) -> u64 {
    patch
        .files
        .iter()
        .map(|f| f.added_lines + f.deleted_lines)
        .sum()
}

// ── Application ─────────────────────────────────────────────────────────

/// Why one file of a patch could not be applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkConflict {
    pub path: String,
    /// Header of the failing hunk, or a pseudo-label for file-level
    /// failures (missing file, existing file, binary content).
    pub hunk: String,
    pub reason: String,
}

impl fmt::Display for HunkConflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.path, self.reason, self.hunk)
    }
}

/// Structured report of every hunk/file that failed to apply. Application
/// is all-or-nothing; callers see either a fully patched tree or this.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictReport {
    pub conflicts: Vec<HunkConflict>,
}

impl fmt::Display for ConflictReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "patch failed to apply: ")?;
        for (idx, c) in self.conflicts.iter().enumerate() {
            if idx > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl core::error::Error for ConflictReport {}

/// Applies a patch to an in-memory tree (path → exact file contents).
/// Returns the new tree, or a conflict report naming every failing hunk.
/// The input tree is never modified.
pub fn apply_to_tree(
    tree: &BTreeMap<String, String>,
    patch: &Patch,
) -> Result<BTreeMap<String, String>, ConflictReport> {
    let mut out = tree.clone();
    let mut conflicts = Vec::new();

    for file in &patch.files {
        apply_file(&mut out, file, &mut conflicts);
    }

    if conflicts.is_empty() {
        Ok(out)
    } else {
        Err(ConflictReport { conflicts })
    }
}

fn apply_file(tree: &mut BTreeMap<String, String>, file: &FilePatch, conflicts: &mut Vec<HunkConflict>) {
    let label = file
        .effective_path()
        .map(normalize_path)
        .unwrap_or_else(|| "<unknown>".to_string());

    if file.is_binary() {
        conflicts.push(HunkConflict {
            path: label,
            hunk: "<binary>".to_string(),
            reason: "binary content is not carried by the diff and cannot be applied".to_string(),
        });
        return;
    }

    match file.change_kind {
        ChangeKind::Add => {
            let Some(path) = file.new_path.as_deref().map(normalize_path) else {
                conflicts.push(HunkConflict {
                    path: label,
                    hunk: "<header>".to_string(),
                    reason: "new file without a path".to_string(),
                });
                return;
            };
            if tree.contains_key(&path) {
                conflicts.push(HunkConflict {
                    path,
                    hunk: "<file>".to_string(),
                    reason: "target of file addition already exists".to_string(),
                });
                return;
            }
            match apply_hunks("", &file.hunks) {
                Ok(content) => {
                    tree.insert(path, content);
                }
                Err(c) => conflicts.push(c.for_path(&path)),
            }
        }
        ChangeKind::Delete => {
            let Some(path) = file.old_path.as_deref().map(normalize_path) else {
                conflicts.push(HunkConflict {
                    path: label,
                    hunk: "<header>".to_string(),
                    reason: "deleted file without a path".to_string(),
                });
                return;
            };
            let Some(existing) = tree.get(&path).cloned() else {
                conflicts.push(HunkConflict {
                    path,
                    hunk: "<file>".to_string(),
                    reason: "file to delete does not exist".to_string(),
                });
                return;
            };
            match apply_hunks(&existing, &file.hunks) {
                Ok(remaining) if remaining.is_empty() => {
                    tree.remove(&path);
                }
                Ok(_) => conflicts.push(HunkConflict {
                    path,
                    hunk: "<file>".to_string(),
                    reason: "deletion hunks leave residual content".to_string(),
                }),
                Err(c) => conflicts.push(c.for_path(&path)),
            }
        }
        ChangeKind::Modify | ChangeKind::Rename | ChangeKind::ModeOnly => {
            let Some(old) = file
                .old_path
                .as_deref()
                .or(file.new_path.as_deref())
                .map(normalize_path)
            else {
                conflicts.push(HunkConflict {
                    path: label,
                    hunk: "<header>".to_string(),
                    reason: "file section without a path".to_string(),
                });
                return;
            };
            let new = file
                .new_path
                .as_deref()
                .map(normalize_path)
                .unwrap_or_else(|| old.clone());
            let Some(existing) = tree.get(&old).cloned() else {
                conflicts.push(HunkConflict {
                    path: old,
                    hunk: "<file>".to_string(),
                    reason: "file to modify does not exist".to_string(),
                });
                return;
            };
            match apply_hunks(&existing, &file.hunks) {
                Ok(content) => {
                    if old != new {
                        tree.remove(&old);
                    }
                    tree.insert(new, content);
                }
                Err(c) => conflicts.push(c.for_path(&old)),
            }
        }
        ChangeKind::Binary => unreachable!("handled above"),
    }
}

struct HunkFailure {
    hunk: String,
    reason: String,
}

impl HunkFailure {
    fn for_path(self, path: &str) -> HunkConflict {
        HunkConflict {
            path: path.to_string(),
            hunk: self.hunk,
            reason: self.reason,
        }
    }
}

/// Exact-context application of ordered hunks against one file's content.
fn apply_hunks(content: &str, hunks: &[Hunk]) -> Result<String, HunkFailure> {
    let had_trailing = content.ends_with('\n');
    let mut old_lines: Vec<&str> = content.split('\n').collect();
    if had_trailing {
        old_lines.pop();
    }
    if content.is_empty() {
        old_lines.clear();
    }

    let mut out: Vec<String> = Vec::new();
    let mut cursor = 0usize; // index into old_lines
    let mut new_no_eof = false;
    let mut touched_eof = false;

    for hunk in hunks {
        // A zero-length old side means "insert after old line N"; otherwise
        // line numbers are 1-based.
        let start = if hunk.old_len == 0 {
            hunk.old_start as usize
        } else {
            (hunk.old_start as usize).saturating_sub(1)
        };
        if start < cursor || start > old_lines.len() {
            return Err(HunkFailure {
                hunk: hunk.header.clone(),
                reason: "hunk position out of range or overlapping".to_string(),
            });
        }
        out.extend(old_lines[cursor..start].iter().map(|s| s.to_string()));
        cursor = start;

        let mut old_seen = 0u64;
        let mut new_seen = 0u64;
        let mut old_no_eof = false;
        for (idx, line) in hunk.lines.iter().enumerate() {
            let next_is_marker = hunk
                .lines
                .get(idx + 1)
                .map(|l| l.starts_with('\\'))
                .unwrap_or(false);
            let first = line.chars().next();
            match first {
                Some(' ') | None => {
                    let expected = body_of(line);
                    match old_lines.get(cursor) {
                        Some(actual) if *actual == expected => {}
                        Some(actual) => {
                            return Err(HunkFailure {
                                hunk: hunk.header.clone(),
                                reason: format!(
                                    "context mismatch at line {}: expected {:?}, found {:?}",
                                    cursor + 1,
                                    expected,
                                    actual
                                ),
                            });
                        }
                        None => {
                            return Err(HunkFailure {
                                hunk: hunk.header.clone(),
                                reason: format!("context extends past end of file at line {}", cursor + 1),
                            });
                        }
                    }
                    out.push(expected.to_string());
                    cursor += 1;
                    old_seen += 1;
                    new_seen += 1;
                    if next_is_marker {
                        old_no_eof = true;
                        new_no_eof = true;
                    }
                }
                Some('-') => {
                    let expected = body_of(line);
                    match old_lines.get(cursor) {
                        Some(actual) if *actual == expected => {}
                        Some(actual) => {
                            return Err(HunkFailure {
                                hunk: hunk.header.clone(),
                                reason: format!(
                                    "deletion mismatch at line {}: expected {:?}, found {:?}",
                                    cursor + 1,
                                    expected,
                                    actual
                                ),
                            });
                        }
                        None => {
                            return Err(HunkFailure {
                                hunk: hunk.header.clone(),
                                reason: format!("deletion extends past end of file at line {}", cursor + 1),
                            });
                        }
                    }
                    cursor += 1;
                    old_seen += 1;
                    if next_is_marker {
                        old_no_eof = true;
                    }
                }
                Some('+') => {
                    out.push(body_of(line).to_string());
                    new_seen += 1;
                    if next_is_marker {
                        new_no_eof = true;
                    }
                }
                Some('\\') => {}
                _ => {
                    return Err(HunkFailure {
                        hunk: hunk.header.clone(),
                        reason: format!("unrecognized body line {line:?}"),
                    });
                }
            }
        }
        if old_seen != hunk.old_len || new_seen != hunk.new_len {
            return Err(HunkFailure {
                hunk: hunk.header.clone(),
                reason: "hunk body does not match its stated line counts".to_string(),
            });
        }
        if cursor == old_lines.len() {
            touched_eof = true;
            // The old side claimed the file ends without a newline; verify.
            if old_no_eof && had_trailing {
                return Err(HunkFailure {
                    hunk: hunk.header.clone(),
                    reason: "patch expects no newline at end of file, but file has one".to_string(),
                });
            }
            if !old_no_eof && !had_trailing && hunk.old_len > 0 {
                return Err(HunkFailure {
                    hunk: hunk.header.clone(),
                    reason: "patch expects a newline at end of file, but file has none".to_string(),
                });
            }
        }
    }

    out.extend(old_lines[cursor..].iter().map(|s| s.to_string()));
    let reaches_eof = cursor == old_lines.len();

    if out.is_empty() {
        return Ok(String::new());
    }
    let trailing = if touched_eof && reaches_eof {
        !new_no_eof
    } else {
        had_trailing
    };
    let mut result = out.join("\n");
    if trailing {
        result.push('\n');
    }
    Ok(result)
}
