//! Leakage scan for synthetic task queries.
//!
//! A query must describe the *what* and *why* of a change without quoting
//! the oracle patch: no touched file path and no identifier lifted from
//! hunk headers or added definition lines may appear verbatim. The scan is
//! a plain substring check over extracted needles, so it errs toward
//! flagging; callers regenerate once with the violations listed and then
//! exclude the task.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diff::{file_set, Patch};

/// Minimum length for an extracted identifier token.
const MIN_IDENTIFIER_LEN: usize = 4;

/// Language-agnostic markers for lines that define functions or types.
const DEFINITION_MARKERS: [&str; 8] = [
    "def ",
    "class ",
    "fn ",
    "function ",
    "struct ",
    "trait ",
    "interface ",
    "enum ",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakKind {
    FilePath,
    Identifier,
}

/// One scan violation: `needle` appears verbatim in the query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakHit {
    pub kind: LeakKind,
    pub needle: String,
}

/// Identifiers extracted from a patch: word-character runs of length ≥ 4
/// from hunk header context and from added lines that define
/// functions/classes.
pub fn oracle_identifiers(patch: &Patch) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for file in &patch.files {
        for hunk in &file.hunks {
            if let Some(ctx) = hunk_header_context(&hunk.header) {
                collect_word_runs(ctx, &mut out);
            }
            for added in hunk.added_lines() {
                let trimmed = added.trim_start();
                if DEFINITION_MARKERS.iter().any(|m| trimmed.contains(m)) {
                    collect_word_runs(added, &mut out);
                }
            }
        }
    }
    out
}

/// The context text after the closing `@@` of a hunk header, if any.
fn hunk_header_context(header: &str) -> Option<&str> {
    let after = header.strip_prefix("@@")?;
    let close = after.find("@@")?;
    let ctx = after[close + 2..].trim();
    if ctx.is_empty() {
        None
    } else {
        Some(ctx)
    }
}

fn collect_word_runs(text: &str, out: &mut BTreeSet<String>) {
    let mut current = String::new();
    for c in text.chars().chain(core::iter::once(' ')) {
        if c.is_alphanumeric() || c == '_' {
            current.push(c);
        } else {
            if current.chars().count() >= MIN_IDENTIFIER_LEN && !current.chars().all(|c| c.is_numeric()) {
                out.insert(core::mem::take(&mut current));
            }
            current.clear();
        }
    }
}

/// Scans a query against a patch. Returns every violation: a touched file
/// path (or its basename) or an extracted identifier appearing verbatim.
pub fn scan_query(query: &str, oracle_patch: &Patch) -> Vec<LeakHit> {
    let mut hits = Vec::new();
    let mut seen = BTreeSet::new();

    for path in file_set(oracle_patch) {
        let mut needles: Vec<&str> = alloc::vec![path.as_str()];
        if let Some((_, base)) = path.rsplit_once('/') {
            needles.push(base);
        }
        for needle in needles {
            if !needle.is_empty() && query.contains(needle) && seen.insert(needle.to_string()) {
                hits.push(LeakHit {
                    kind: LeakKind::FilePath,
                    needle: needle.to_string(),
                });
            }
        }
    }

    for ident in oracle_identifiers(oracle_patch) {
        if query.contains(ident.as_str()) && seen.insert(ident.clone()) {
            hits.push(LeakHit {
                kind: LeakKind::Identifier,
                needle: ident,
            });
        }
    }

    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::parse_patch;

    const FIXTURE: &str = "\
diff --git a/svc/judge_client.py b/svc/judge_client.py
--- a/svc/judge_client.py
+++ b/svc/judge_client.py
@@ -10,2 +10,4 @@ def fetch_verdict(self):
     data = request()
+def sample_seed(self):
+    return self._rng.randint()
 line
";

    #[test]
    fn clean_query_passes() {
        let patch = parse_patch(FIXTURE).unwrap();
        let hits = scan_query("Fix the race in random number handling", &patch);
        assert!(hits.is_empty());
    }

    #[test]
    fn file_path_is_caught() {
        let patch = parse_patch(FIXTURE).unwrap();
        let hits = scan_query("Please edit svc/judge_client.py to fix it", &patch);
        assert!(hits
            .iter()
            .any(|h| h.kind == LeakKind::FilePath && h.needle == "svc/judge_client.py"));
    }

    #[test]
    fn basename_is_caught() {
        let patch = parse_patch(FIXTURE).unwrap();
        let hits = scan_query("The judge_client.py module misbehaves", &patch);
        assert!(hits.iter().any(|h| h.kind == LeakKind::FilePath));
    }

    #[test]
    fn added_definition_identifier_is_caught() {
        let patch = parse_patch(FIXTURE).unwrap();
        let idents = oracle_identifiers(&patch);
        assert!(idents.contains("sample_seed"));
        let hits = scan_query("Add a sample_seed helper", &patch);
        assert!(hits
            .iter()
            .any(|h| h.kind == LeakKind::Identifier && h.needle == "sample_seed"));
    }

    #[test]
    fn hunk_header_context_identifier_is_caught() {
        let patch = parse_patch(FIXTURE).unwrap();
        let idents = oracle_identifiers(&patch);
        assert!(idents.contains("fetch_verdict"));
    }

    #[test]
    fn plain_added_lines_do_not_contribute() {
        // "data = request()" is an added line but not a definition line;
        // its tokens must not become needles.
        let patch = parse_patch(
            "--- a/x.py\n+++ b/x.py\n@@ -1 +1,2 @@\n line\n+data = request_payload()\n",
        )
        .unwrap();
        let idents = oracle_identifiers(&patch);
        assert!(!idents.contains("request_payload"));
    }

    #[test]
    fn short_and_numeric_tokens_ignored(){
        let patch = parse_patch(
            "--- a/x.py\n+++ b/x.py\n@@ -1 +1,2 @@ def ab(12345):\n line\n+x = 1\n",
        )
        .unwrap();
        let idents = oracle_identifiers(&patch);
        assert!(idents.is_empty(), "{idents:?}");
    }
}
