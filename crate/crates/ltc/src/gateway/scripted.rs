//! Deterministic scripted backend for tests and offline runs.
//!
//! A script is an ordered list of entries; a request is answered by the
//! first entry whose tags and substrings all match and whose uses are not
//! exhausted. When nothing matches, the configured exhaustion policy
//! either fails loudly (naming the request digest) or repeats the last
//! matched reply.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, ChatRequest};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// All listed tags must be present on the request.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub tags: BTreeSet<String>,
    /// All listed substrings must appear in some message.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub substrings: Vec<String>,
    pub reply: String,
    /// How many requests this entry may answer; absent = unlimited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uses: Option<u64>,
}

impl ScriptEntry {
    fn matches(&self, request: &ChatRequest) -> bool {
        if !self.tags.iter().all(|t| request.audit_tags.contains(t)) {
            return false;
        }
        self.substrings.iter().all(|needle| {
            request
                .messages
                .iter()
                .any(|m| m.content.contains(needle.as_str()))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExhaustionPolicy {
    #[default]
    Error,
    RepeatLast,
}

/// On-disk script form (see the config docs): policy plus entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default)]
    pub policy: ExhaustionPolicy,
    pub entries: Vec<ScriptEntry>,
}

pub struct ScriptedBackend {
    entries: Mutex<Vec<(ScriptEntry, u64)>>,
    policy: ExhaustionPolicy,
    last_reply: Mutex<Option<String>>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>, policy: ExhaustionPolicy) -> ScriptedBackend {
        ScriptedBackend {
            entries: Mutex::new(entries.into_iter().map(|e| (e, 0)).collect()),
            policy,
            last_reply: Mutex::new(None),
        }
    }

    /// A pure reply queue: each reply matches any request, once, in order.
    pub fn queue<I, S>(replies: I, policy: ExhaustionPolicy) -> ScriptedBackend
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let entries = replies
            .into_iter()
            .map(|r| ScriptEntry {
                reply: r.into(),
                uses: Some(1),
                ..ScriptEntry::default()
            })
            .collect();
        ScriptedBackend::new(entries, policy)
    }

    pub fn from_file(path: &Path) -> Result<ScriptedBackend, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Transport {
            message: format!("reading script {}: {e}", path.display()),
            retryable: false,
        })?;
        let file: ScriptFile =
            serde_json::from_str(&text).map_err(|e| BackendError::Transport {
                message: format!("parsing script {}: {e}", path.display()),
                retryable: false,
            })?;
        Ok(ScriptedBackend::new(file.entries, file.policy))
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest, digest: &str) -> Result<String, BackendError> {
        let mut entries = self.entries.lock().unwrap();
        for (entry, used) in entries.iter_mut() {
            if entry.uses.is_none_or(|max| *used < max) && entry.matches(request) {
                *used += 1;
                let reply = entry.reply.clone();
                *self.last_reply.lock().unwrap() = Some(reply.clone());
                return Ok(reply);
            }
        }
        match self.policy {
            ExhaustionPolicy::RepeatLast => self
                .last_reply
                .lock()
                .unwrap()
                .clone()
                .ok_or_else(|| BackendError::ScriptExhausted {
                    digest: digest.to_string(),
                }),
            ExhaustionPolicy::Error => Err(BackendError::ScriptExhausted {
                digest: digest.to_string(),
            }),
        }
    }
}
