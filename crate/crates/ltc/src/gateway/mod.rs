//! The single chokepoint for all model interactions: pluggable backends,
//! content-addressed caching, prompt auditing, and transcript persistence.
//!
//! Every pipeline call goes through [`Gateway::complete`]: the request is
//! audited, answered from the cache when its digest is known, and
//! otherwise dispatched to the named backend under a per-digest
//! single-flight lock. Replies are cached with atomic write-then-rename
//! and every exchange is appended to the run transcript.

mod audit;
mod http;
mod scripted;

pub use audit::{AuditCounters, AuditRegistry, AuditRule, AuditScope, AuditViolation};
pub use http::HttpBackend;
pub use scripted::{ExhaustionPolicy, ScriptEntry, ScriptFile, ScriptedBackend};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl Default for ChatParams {
    fn default() -> Self {
        // Temperature 0 everywhere: determinism maximizes reproducibility
        // and cache hit rates.
        ChatParams {
            temperature: 0.0,
            max_tokens: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub backend_id: String,
    pub messages: Vec<ChatMessage>,
    pub params: ChatParams,
    /// Every call is attributable to a pipeline stage; never empty.
    pub audit_tags: BTreeSet<String>,
}

impl ChatRequest {
    pub fn new(backend_id: impl Into<String>, tags: &[&str]) -> ChatRequest {
        ChatRequest {
            backend_id: backend_id.into(),
            messages: Vec::new(),
            params: ChatParams::default(),
            audit_tags: tags.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn message(mut self, role: Role, content: impl Into<String>) -> ChatRequest {
        self.messages.push(ChatMessage {
            role,
            content: content.into(),
        });
        self
    }

    pub fn tag(mut self, tag: impl Into<String>) -> ChatRequest {
        self.audit_tags.insert(tag.into());
        self
    }

    /// Stable content hash of (backend_id, messages, params). Built over a
    /// hand-rolled length-prefixed encoding so it is invariant to any
    /// serializer's formatting choices.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        let mut field = |bytes: &[u8]| {
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        };
        field(self.backend_id.as_bytes());
        for m in &self.messages {
            field(m.role.as_str().as_bytes());
            field(m.content.as_bytes());
        }
        field(format!("{:?}", self.params.temperature).as_bytes());
        field(
            self.params
                .max_tokens
                .map(|v| v.to_string())
                .unwrap_or_default()
                .as_bytes(),
        );
        hex::encode(hasher.finalize())
    }
}

/// One persisted exchange.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transcript {
    pub digest: String,
    pub request: ChatRequest,
    pub reply: String,
    pub cache_hit: bool,
    pub timestamp: String,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend transport error: {message}")]
    Transport { message: String, retryable: bool },
    #[error("scripted backend has no matching entry for request {digest}")]
    ScriptExhausted { digest: String },
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("request rejected by the prompt auditor")]
    Audit(#[from] AuditViolation),
    #[error("no backend registered under id {0:?}")]
    UnknownBackend(String),
    #[error("request is invalid: {0}")]
    InvalidRequest(&'static str),
    #[error("backend {backend_id} failed for request {digest}: {source}")]
    Backend {
        backend_id: String,
        digest: String,
        source: BackendError,
    },
    #[error("gateway io: {0}")]
    Io(#[from] std::io::Error),
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest, digest: &str) -> Result<String, BackendError>;
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    digest: String,
    backend_id: String,
    reply: String,
}

pub struct Gateway {
    backends: Mutex<BTreeMap<String, Arc<dyn Backend>>>,
    cache_dir: Option<PathBuf>,
    transcript_path: Mutex<Option<PathBuf>>,
    audit: AuditRegistry,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    transport_retries: u32,
}

impl Gateway {
    pub fn new(cache_dir: Option<PathBuf>) -> Gateway {
        Gateway {
            backends: Mutex::new(BTreeMap::new()),
            cache_dir,
            transcript_path: Mutex::new(None),
            audit: AuditRegistry::default(),
            inflight: Mutex::new(HashMap::new()),
            transport_retries: 2,
        }
    }

    pub fn register_backend(&self, id: impl Into<String>, backend: Arc<dyn Backend>) {
        self.backends.lock().unwrap().insert(id.into(), backend);
    }

    pub fn has_backend(&self, id: &str) -> bool {
        self.backends.lock().unwrap().contains_key(id)
    }

    /// Routes the run's transcript log; one jsonl line per exchange.
    pub fn set_transcript_path(&self, path: Option<PathBuf>) {
        *self.transcript_path.lock().unwrap() = path;
    }

    pub fn audit(&self) -> &AuditRegistry {
        &self.audit
    }

    pub fn audit_counters(&self) -> AuditCounters {
        self.audit.counters()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be nonempty"));
        }
        if request.audit_tags.is_empty() {
            return Err(GatewayError::InvalidRequest("audit_tags must be nonempty"));
        }
        let digest = request.digest();
        self.audit.check(request, &digest)?;

        if let Some(reply) = self.cache_get(&digest)? {
            self.persist_transcript(request, &digest, &reply, true)?;
            return Ok(reply);
        }

        // Per-digest single flight: identical concurrent requests hit the
        // backend once.
        let flight = {
            let mut map = self.inflight.lock().unwrap();
            map.entry(digest.clone())
                .or_insert_with(|| Arc::new(Mutex::new(())))
                .clone()
        };
        let _guard = flight.lock().unwrap();

        if let Some(reply) = self.cache_get(&digest)? {
            self.persist_transcript(request, &digest, &reply, true)?;
            return Ok(reply);
        }

        let backend = self
            .backends
            .lock()
            .unwrap()
            .get(&request.backend_id)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownBackend(request.backend_id.clone()))?;

        let mut attempt = 0;
        let reply = loop {
            match backend.complete(request, &digest) {
                Ok(reply) => break reply,
                Err(BackendError::Transport { message, retryable })
                    if retryable && attempt < self.transport_retries =>
                {
                    attempt += 1;
                    let _ = message;
                }
                Err(source) => {
                    return Err(GatewayError::Backend {
                        backend_id: request.backend_id.clone(),
                        digest,
                        source,
                    })
                }
            }
        };

        self.cache_put(&digest, &request.backend_id, &reply)?;
        self.persist_transcript(request, &digest, &reply, false)?;
        Ok(reply)
    }

    fn cache_path(&self, digest: &str) -> Option<PathBuf> {
        self.cache_dir
            .as_ref()
            .map(|dir| dir.join(&digest[..2]).join(format!("{digest}.json")))
    }

    fn cache_get(&self, digest: &str) -> Result<Option<String>, GatewayError> {
        let Some(path) = self.cache_path(digest) else {
            return Ok(None);
        };
        match std::fs::read_to_string(&path) {
            Ok(text) => {
                let entry: CacheEntry = serde_json::from_str(&text)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
                Ok(Some(entry.reply))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn cache_put(&self, digest: &str, backend_id: &str, reply: &str) -> Result<(), GatewayError> {
        let Some(path) = self.cache_path(digest) else {
            return Ok(());
        };
        let dir = path.parent().unwrap();
        std::fs::create_dir_all(dir)?;
        let entry = CacheEntry {
            digest: digest.to_string(),
            backend_id: backend_id.to_string(),
            reply: reply.to_string(),
        };
        // Write-then-rename keeps readers from ever seeing a torn entry.
        let tmp = dir.join(format!(".tmp-{digest}-{}", std::process::id()));
        std::fs::write(&tmp, serde_json::to_vec(&entry).unwrap())?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn persist_transcript(
        &self,
        request: &ChatRequest,
        digest: &str,
        reply: &str,
        cache_hit: bool,
    ) -> Result<(), GatewayError> {
        let guard = self.transcript_path.lock().unwrap();
        let Some(path) = guard.as_ref() else {
            return Ok(());
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let transcript = Transcript {
            digest: digest.to_string(),
            request: request.clone(),
            reply: reply.to_string(),
            cache_hit,
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        let mut line = serde_json::to_vec(&transcript).unwrap();
        line.push(b'\n');
        file.write_all(&line)?;
        Ok(())
    }
}

/// True when any cause in the chain is a prompt-audit violation; such
/// errors abort the whole run (exit code 4) instead of being isolated.
pub fn is_audit_violation(error: &anyhow::Error) -> bool {
    error
        .chain()
        .any(|cause| cause.downcast_ref::<AuditViolation>().is_some())
}

/// Loads all transcripts from a run's jsonl log.
pub fn load_transcripts(path: &Path) -> anyhow::Result<Vec<Transcript>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_request(tags: &[&str], content: &str) -> ChatRequest {
        ChatRequest::new("main", tags).message(Role::User, content)
    }

    #[test]
    fn cache_law_second_call_is_hit_and_identical() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(Some(dir.path().to_path_buf()));
        gw.register_backend(
            "main",
            Arc::new(ScriptedBackend::queue(["first", "second"], ExhaustionPolicy::Error)),
        );
        let req = simple_request(&["tagx"], "hello");
        let a = gw.complete(&req).unwrap();
        let b = gw.complete(&req).unwrap();
        assert_eq!(a, "first");
        assert_eq!(b, "first", "cache must return the identical reply");
    }

    #[test]
    fn transcripts_record_cache_hits() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::new(Some(dir.path().join("cache")));
        let tpath = dir.path().join("transcripts.jsonl");
        gw.set_transcript_path(Some(tpath.clone()));
        gw.register_backend(
            "main",
            Arc::new(ScriptedBackend::queue(["r"], ExhaustionPolicy::RepeatLast)),
        );
        let req = simple_request(&["stage"], "x");
        gw.complete(&req).unwrap();
        gw.complete(&req).unwrap();
        let transcripts = load_transcripts(&tpath).unwrap();
        assert_eq!(transcripts.len(), 2);
        assert!(!transcripts[0].cache_hit);
        assert!(transcripts[1].cache_hit);
        assert!(transcripts.iter().all(|t| !t.request.audit_tags.is_empty()));
    }

    #[test]
    fn empty_tags_rejected() {
        let gw = Gateway::new(None);
        let req = ChatRequest {
            backend_id: "main".into(),
            messages: vec![ChatMessage {
                role: Role::User,
                content: "x".into(),
            }],
            params: ChatParams::default(),
            audit_tags: BTreeSet::new(),
        };
        assert!(matches!(
            gw.complete(&req),
            Err(GatewayError::InvalidRequest(_))
        ));
    }

    #[test]
    fn audit_violation_aborts_before_backend() {
        let gw = Gateway::new(None);
        gw.register_backend(
            "main",
            Arc::new(ScriptedBackend::queue(["never"], ExhaustionPolicy::Error)),
        );
        let patch = ltc_core::diff::parse_patch(
            "--- a/f\n+++ b/f\n@@ -1 +1,2 @@\n x\n+forbidden_oracle_content_line\n",
        )
        .unwrap();
        let _scope = gw
            .audit()
            .register(AuditRule::for_oracle("t1", "solve", &patch));
        let req = simple_request(&["solve", "task:t1"], "leak: forbidden_oracle_content_line");
        match gw.complete(&req) {
            Err(GatewayError::Audit(v)) => assert!(v.rule.contains("t1")),
            other => panic!("expected audit failure, got {other:?}"),
        }
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let a = simple_request(&["t"], "content");
        let b = simple_request(&["t"], "content");
        let c = simple_request(&["t"], "different");
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
        // Tags are attribution, not content: they do not change the digest.
        let tagged = simple_request(&["other"], "content");
        assert_eq!(a.digest(), tagged.digest());
    }

    #[test]
    fn concurrent_identical_requests_hit_backend_once() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Arc::new(Gateway::new(Some(dir.path().to_path_buf())));
        gw.register_backend(
            "main",
            Arc::new(ScriptedBackend::queue(["only-reply"], ExhaustionPolicy::Error)),
        );
        let mut handles = Vec::new();
        for _ in 0..8 {
            let gw = gw.clone();
            handles.push(std::thread::spawn(move || {
                gw.complete(&simple_request(&["t"], "same")).unwrap()
            }));
        }
        for h in handles {
            assert_eq!(h.join().unwrap(), "only-reply");
        }
    }
}
