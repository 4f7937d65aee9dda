//! Prompt auditing: scoped rules that forbid oracle content from ever
//! entering learn/solve prompts.
//!
//! A rule fires when all of its required tags are present on a request and
//! any forbidden needle appears in any message. Violations are hard
//! failures — the pipeline aborts the task rather than proceeding with a
//! contaminated prompt.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use ltc_core::diff::Patch;

use super::ChatRequest;

/// Minimum needle length: shorter oracle lines are too likely to occur
/// coincidentally in honest prompts.
pub const MIN_NEEDLE_LEN: usize = 13;

/// Stage tags whose requests the auditor must scan on every call.
pub const AUDITED_STAGE_TAGS: [&str; 2] = ["learn_attempt", "solve"];

#[derive(Debug, Clone)]
pub struct AuditRule {
    pub name: String,
    /// Every tag here must be present on a request for the rule to apply.
    pub required_tags: BTreeSet<String>,
    pub forbidden: Vec<String>,
}

impl AuditRule {
    /// Rule forbidding a task's oracle additions in its own attempt/solve
    /// prompts. Added lines are the future content an honest prompt cannot
    /// contain; context and deleted lines already exist in the snapshot.
    pub fn for_oracle(task_id: &str, stage_tag: &str, oracle_patch: &Patch) -> AuditRule {
        let forbidden = oracle_patch
            .added_line_contents()
            .map(str::trim)
            .filter(|l| l.len() >= MIN_NEEDLE_LEN)
            .map(String::from)
            .collect();
        AuditRule {
            name: format!("oracle-isolation:{task_id}"),
            required_tags: [stage_tag.to_string(), format!("task:{task_id}")]
                .into_iter()
                .collect(),
            forbidden,
        }
    }

    /// Rule keeping rendered skill text out of baseline solve prompts.
    pub fn for_baseline_purity(task_id: &str) -> AuditRule {
        AuditRule {
            name: format!("baseline-purity:{task_id}"),
            required_tags: [
                "solve".to_string(),
                "baseline".to_string(),
                format!("task:{task_id}"),
            ]
            .into_iter()
            .collect(),
            forbidden: vec![ltc_core::skills::RENDER_HEADER.to_string()],
        }
    }
}

/// A failed audit. Carries enough to diagnose without echoing the full
/// forbidden content back into logs.
#[derive(Debug, Clone, thiserror::Error)]
#[error("prompt audit violation: rule {rule:?} matched needle {needle_preview:?} in request {digest}")]
pub struct AuditViolation {
    pub rule: String,
    pub needle_preview: String,
    pub digest: String,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct AuditCounters {
    /// Requests tagged learn_attempt or solve.
    pub stage_tagged: u64,
    /// Of those, how many the auditor scanned (must equal stage_tagged).
    pub scanned: u64,
    /// All requests seen.
    pub total: u64,
}

#[derive(Clone, Default)]
pub struct AuditRegistry {
    inner: Arc<Mutex<Vec<(u64, AuditRule)>>>,
    counters: Arc<Mutex<AuditCounters>>,
    next_id: Arc<Mutex<u64>>,
}

/// Removes its rule when dropped, so oracle rules live exactly as long as
/// the task that registered them.
pub struct AuditScope {
    registry: AuditRegistry,
    id: u64,
}

impl Drop for AuditScope {
    fn drop(&mut self) {
        self.registry
            .inner
            .lock()
            .unwrap()
            .retain(|(id, _)| *id != self.id);
    }
}

impl AuditRegistry {
    pub fn register(&self, rule: AuditRule) -> AuditScope {
        let mut next = self.next_id.lock().unwrap();
        *next += 1;
        let id = *next;
        self.inner.lock().unwrap().push((id, rule));
        AuditScope {
            registry: self.clone(),
            id,
        }
    }

    /// Scans a request. Every request passes through here; the counters
    /// prove the scan ran on 100% of learn/solve-tagged requests.
    pub fn check(&self, request: &ChatRequest, digest: &str) -> Result<(), AuditViolation> {
        let stage_tagged = AUDITED_STAGE_TAGS
            .iter()
            .any(|t| request.audit_tags.contains(*t));
        {
            let mut c = self.counters.lock().unwrap();
            c.total += 1;
            if stage_tagged {
                c.stage_tagged += 1;
                c.scanned += 1;
            }
        }

        let rules = self.inner.lock().unwrap();
        for (_, rule) in rules.iter() {
            if !rule
                .required_tags
                .iter()
                .all(|t| request.audit_tags.contains(t))
            {
                continue;
            }
            for needle in &rule.forbidden {
                if request
                    .messages
                    .iter()
                    .any(|m| m.content.contains(needle.as_str()))
                {
                    return Err(AuditViolation {
                        rule: rule.name.clone(),
                        needle_preview: preview(needle),
                        digest: digest.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn counters(&self) -> AuditCounters {
        *self.counters.lock().unwrap()
    }
}

fn preview(s: &str) -> String {
    let mut p: String = s.chars().take(24).collect();
    if p.len() < s.len() {
        p.push('…');
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, ChatParams, Role};

    fn request(tags: &[&str], content: &str) -> ChatRequest {
        ChatRequest {
            backend_id: "b".into(),
            messages: vec![ChatMessage {
                role: Role::User,
                content: content.into(),
            }],
            params: ChatParams::default(),
            audit_tags: tags.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn oracle_rule_fires_only_in_scope() {
        let patch = ltc_core::diff::parse_patch(
            "--- a/f\n+++ b/f\n@@ -1 +1,2 @@\n x\n+the_secret_added_line_content()\n",
        )
        .unwrap();
        let registry = AuditRegistry::default();
        let _scope = registry.register(AuditRule::for_oracle("t1", "learn_attempt", &patch));

        let bad = request(
            &["learn_attempt", "task:t1"],
            "prompt with the_secret_added_line_content() inside",
        );
        assert!(registry.check(&bad, "d1").is_err());

        // Same content under a reflect tag is legitimate.
        let reflect = request(&["reflect", "task:t1"], "the_secret_added_line_content()");
        assert!(registry.check(&reflect, "d2").is_ok());

        // Another task's prompts are not scanned against this rule.
        let other = request(
            &["learn_attempt", "task:t2"],
            "the_secret_added_line_content()",
        );
        assert!(registry.check(&other, "d3").is_ok());
    }

    #[test]
    fn scope_drop_removes_rule() {
        let patch = ltc_core::diff::parse_patch(
            "--- a/f\n+++ b/f\n@@ -1 +1,2 @@\n x\n+another_secret_line_of_code\n",
        )
        .unwrap();
        let registry = AuditRegistry::default();
        {
            let _scope = registry.register(AuditRule::for_oracle("t1", "solve", &patch));
            let bad = request(&["solve", "task:t1"], "another_secret_line_of_code");
            assert!(registry.check(&bad, "d").is_err());
        }
        let after = request(&["solve", "task:t1"], "another_secret_line_of_code");
        assert!(registry.check(&after, "d").is_ok());
    }

    #[test]
    fn short_lines_are_not_needles() {
        let patch =
            ltc_core::diff::parse_patch("--- a/f\n+++ b/f\n@@ -1 +1,2 @@\n x\n+short()\n").unwrap();
        let rule = AuditRule::for_oracle("t", "solve", &patch);
        assert!(rule.forbidden.is_empty());
    }

    #[test]
    fn counters_track_stage_tags() {
        let registry = AuditRegistry::default();
        registry.check(&request(&["judge"], "x"), "d").unwrap();
        registry
            .check(&request(&["learn_attempt", "task:t"], "x"), "d")
            .unwrap();
        registry.check(&request(&["solve", "task:t"], "x"), "d").unwrap();
        let c = registry.counters();
        assert_eq!(c.total, 3);
        assert_eq!(c.stage_tagged, 2);
        assert_eq!(c.scanned, 2);
    }
}
