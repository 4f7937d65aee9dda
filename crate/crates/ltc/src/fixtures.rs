//! Deterministic fixture corpus: a synthetic repository with planted
//! conventions, matching scripted-gateway scripts, and a ready-to-run
//! config. The test suite and the README walkthrough drive the whole
//! pipeline against this corpus; nothing here touches a network.
//!
//! The repository tells a small story: a python RL-ish pipeline whose
//! maintainers route events through `core/utils.py`, raise a dedicated
//! error type, keep one test file per module, and wrap external scoring
//! calls in a retry helper. Commits carry category prefixes (arch:, conc:,
//! judge:, train:, test:, config:, tool:) that the scripted tagger keys on.

use std::path::{Path, PathBuf};
use std::process::Command;

use anyhow::{bail, Context, Result};

use crate::gateway::{ExhaustionPolicy, ScriptEntry, ScriptFile};

const BASE_EPOCH: i64 = 1_709_251_200; // 2024-03-01T00:00:00Z

#[derive(Debug, Clone)]
pub struct PlantedCommit {
    pub commit_id: String,
    pub message: String,
    /// Expected category label for substantive commits.
    pub category: Option<&'static str>,
    /// Scripted synthetic query (substantive commits only).
    pub query: Option<&'static str>,
    /// Distinctive query substring used by script matchers.
    pub query_fragment: Option<&'static str>,
    /// Scripted quality verdict; false means the LLM stage rejects it.
    pub accepted: bool,
}

pub struct SynthRepo {
    pub dir: PathBuf,
    pub commits: Vec<PlantedCommit>,
}

struct Builder {
    dir: PathBuf,
    commits: Vec<PlantedCommit>,
}

impl Builder {
    fn git(&self, args: &[&str]) -> Result<String> {
        crate::gitio::git(&self.dir, args)
    }

    fn write(&self, rel: &str, content: &str) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, content)?;
        Ok(())
    }

    fn edit(&self, rel: &str, find: &str, replace: &str) -> Result<()> {
        let path = self.dir.join(rel);
        let content = std::fs::read_to_string(&path)
            .with_context(|| format!("fixture edit target {rel} missing"))?;
        if !content.contains(find) {
            bail!("fixture anchor not found in {rel}: {find:?}");
        }
        std::fs::write(path, content.replacen(find, replace, 1))?;
        Ok(())
    }

    fn commit(
        &mut self,
        message: &'static str,
        category: Option<&'static str>,
        query: Option<&'static str>,
        query_fragment: Option<&'static str>,
        accepted: bool,
    ) -> Result<()> {
        self.git(&["add", "-A"])?;
        let stamp = BASE_EPOCH + (self.commits.len() as i64 + 1) * 3600;
        let date = format!("{stamp} +0000");
        let output = Command::new("git")
            .arg("-C")
            .arg(&self.dir)
            .args(["commit", "-q", "-m", message])
            .env("GIT_AUTHOR_DATE", &date)
            .env("GIT_COMMITTER_DATE", &date)
            .env("GIT_TERMINAL_PROMPT", "0")
            .output()?;
        if !output.status.success() {
            bail!(
                "fixture commit {message:?} failed: {}",
                String::from_utf8_lossy(&output.stderr)
            );
        }
        let commit_id = self.git(&["rev-parse", "HEAD"])?.trim().to_string();
        self.commits.push(PlantedCommit {
            commit_id,
            message: message.to_string(),
            category,
            query,
            query_fragment,
            accepted,
        });
        Ok(())
    }
}

/// Builds the ~30-commit synthetic repository at `dir` (which must not
/// already contain one). Deterministic content and timestamps; commit ids
/// stay stable for a fixed git version.
pub fn build_synth_repo(dir: &Path) -> Result<SynthRepo> {
    std::fs::create_dir_all(dir)?;
    let mut b = Builder {
        dir: dir.to_path_buf(),
        commits: Vec::new(),
    };
    b.git(&["init", "-q", "-b", "main"])?;
    b.git(&["config", "user.name", "Fixture Dev"])?;
    b.git(&["config", "user.email", "dev@fixture.invalid"])?;
    b.git(&["config", "commit.gpgsign", "false"])?;

    // 1 — trivial scaffold, rejected by the min-lines prefilter.
    b.write(
        "README.md",
        "# demo-rl-pipeline\n\nA small training pipeline used as a fixture corpus.\n",
    )?;
    b.commit("init scaffold", None, None, None, false)?;

    // 2 — core orchestrator plus shared helpers.
    b.write(
        "core/pipeline.py",
        r#"# orchestrates stage execution for the demo pipeline
"""Stage flow: prepare -> collect -> score -> publish."""

from core.utils import PipelineError, emit_event

STAGES = ["prepare", "collect", "score", "publish"]


def run_stages(cfg):
    done = []
    for st in STAGES:
        emit_event("stage.start", st=st)
        if st not in cfg.get("enabled", STAGES):
            raise PipelineError("stage disabled: " + st)
        done.append(st)
        emit_event("stage.done", st=st)
    return done
"#,
    )?;
    b.write(
        "core/utils.py",
        r#"# utils: shared event helpers for the demo pipeline
"""Event recording and IO retry helpers used across the pipeline."""


class PipelineError(Exception):
    """Raised when a stage cannot continue."""


def emit_event(evt, **kv):
    rec = {"event": evt}
    rec.update(kv)
    print(rec)
    return rec


def retry_call(fn, n=3):
    err = None
    for _ in range(n):
        try:
            return fn()
        except OSError as e:
            err = e
    raise PipelineError(str(err))
"#,
    )?;
    b.commit(
        "arch: introduce pipeline orchestrator and event logging helpers",
        Some("architecture"),
        Some("Stand up the core flow that executes stages in order, raising a dedicated error when a stage cannot continue, plus shared helpers for recording events and re-attempting flaky IO."),
        Some("executes stages in order"),
        true,
    )?;

    // 3 — dispatch queue.
    b.write(
        "core/dispatch.py",
        r#"# dispatch: ordered handoff between workers
"""Work items flow through a single ordered queue."""

import queue

from core.utils import emit_event


def dispatch_jobs(q, xs):
    for it in xs:
        q.put(it)
        emit_event("dispatch.enqueue", n=q.qsize())
    return q.qsize()


def drain_queue(q):
    out = []
    while not q.empty():
        out.append(q.get())
    emit_event("dispatch.drain", n=len(out))
    return out
"#,
    )?;
    b.commit(
        "conc: serialize worker handoff through the dispatch queue",
        Some("concurrency"),
        Some("Workers hand off items unpredictably under load; funnel all work through one ordered buffer so the handoff becomes deterministic."),
        Some("handoff becomes deterministic"),
        true,
    )?;

    // 4 — judge client.
    b.write(
        "judge/client.py",
        r#"# judge client: integration with the external scoring service
"""Talks to the scoring service; every call goes through retry_call."""

import random

from core.utils import emit_event, retry_call

_POOL = random.Random(1234)


class VerdictClient:
    def __init__(self, url):
        self.url = url

    def send_verdict(self, pl):
        emit_event("judge.send", url=self.url)
        return retry_call(lambda: {"ok": True, "pl": pl})

    def poll_verdict(self, k):
        tok = _POOL.random()
        emit_event("judge.poll", k=k, tok=tok)
        return retry_call(lambda: {"k": k, "tok": tok})
"#,
    )?;
    b.commit(
        "judge: add verdict client with retry wrapper",
        Some("judging"),
        Some("We need a small component that talks to the external scoring service, with bounded re-attempts whenever the service hiccups."),
        Some("external scoring service"),
        true,
    )?;

    // 5 — training loop.
    b.write(
        "train/loop.py",
        r#"# training loop for the demo pipeline
"""Optimization cycle with a hard budget on executed steps."""

from core.utils import PipelineError, emit_event

MAX_STEPS = 1000


def guard_steps(n):
    if n > MAX_STEPS:
        raise PipelineError("step budget exceeded")
    return n


def train_epoch(bs):
    total = 0
    for i, b in enumerate(bs):
        guard_steps(i)
        total += len(b)
        emit_event("train.step", i=i)
    return total
"#,
    )?;
    b.commit(
        "train: add training loop with step guard",
        Some("training"),
        Some("Add the main optimization cycle with protection against running past the configured budget."),
        Some("optimization cycle with protection"),
        true,
    )?;

    // 6 — tests for utils (one test file per module convention).
    b.write(
        "tests/test_utils.py",
        r#"# tests for core/utils following the one-file-per-module rule
from core.utils import PipelineError, emit_event, retry_call


def test_emit_event_shape():
    rec = emit_event("x", a=1)
    assert rec["event"] == "x"
    assert rec["a"] == 1


def test_retry_call_raises_after_budget():
    def boom():
        raise OSError("nope")
    try:
        retry_call(boom, n=2)
    except PipelineError:
        pass
"#,
    )?;
    b.commit(
        "test: cover event logging helpers",
        Some("testing"),
        Some("Add coverage for the shared event recording helpers, keeping to the one-file-per-module layout the suite uses."),
        Some("one-file-per-module layout"),
        true,
    )?;

    // 7 — settings schema.
    b.write(
        "configs/settings.py",
        r#"# settings: central tunable knobs for the demo pipeline
"""Defaults live here; loaders overlay user values on top."""

DEFAULTS = {
    "enabled": ["prepare", "collect", "score", "publish"],
    "budget": 1000,
    "judge_url": "https://scoring.invalid",
    "fanout": 4,
}


def load_settings(ov):
    cfg = dict(DEFAULTS)
    cfg.update(ov or {})
    return cfg
"#,
    )?;
    b.commit(
        "config: add default settings schema",
        Some("configuration"),
        Some("Introduce a central place for tunable knobs with sane defaults overlaid by user values at startup."),
        Some("central place for tunable"),
        true,
    )?;

    // 8 — launcher script.
    b.write(
        "scripts/run.sh",
        r#"#!/bin/sh
# launcher for the demo pipeline
export DEMO_HOME="$(dirname "$0")/.."
cd "$DEMO_HOME" || exit 1
echo "preparing environment"
export PYTHONPATH="$DEMO_HOME"
echo "launching stages"
python -m core.pipeline "$@"
status=$?
echo "pipeline exited with $status"
exit $status
"#,
    )?;
    b.commit(
        "tool: add run script",
        Some("tooling"),
        Some("Provide a single entry point that prepares the environment and launches the stage flow."),
        Some("single entry point"),
        true,
    )?;

    // 9 — dependency pin bump: every file is a manifest, small change.
    b.write(
        "requirements.txt",
        "numpy==1.26.0\nrequests==2.31.0\npyyaml==6.0.1\ntqdm==4.66.0\nrich==13.7.0\n",
    )?;
    b.write(
        "package.json",
        "{\n  \"name\": \"demo-dash\",\n  \"version\": \"0.1.0\",\n  \"private\": true\n}\n",
    )?;
    b.commit("chore: add dependency pins", None, None, None, false)?;
    b.write(
        "requirements.txt",
        "numpy==1.26.4\nrequests==2.32.0\npyyaml==6.0.2\ntqdm==4.66.4\nrich==13.7.1\n",
    )?;
    b.write(
        "package.json",
        "{\n  \"name\": \"demo-dash\",\n  \"version\": \"0.1.1\",\n  \"private\": true\n}\n",
    )?;
    b.commit("chore: bump dependency pins", None, None, None, false)?;

    // 11 — typo fix, rejected by min-lines.
    b.edit(
        "README.md",
        "A small training pipeline used as a fixture corpus.",
        "A small training pipeline used as a fixtures corpus.",
    )?;
    b.commit("fix typo in readme", None, None, None, false)?;

    // 12 — extract stage runner (this one's first scripted query leaks).
    b.edit(
        "core/pipeline.py",
        r#"def run_stages(cfg):
    done = []
    for st in STAGES:
        emit_event("stage.start", st=st)
        if st not in cfg.get("enabled", STAGES):
            raise PipelineError("stage disabled: " + st)
        done.append(st)
        emit_event("stage.done", st=st)
    return done
"#,
        r#"def run_single(cfg, st):
    emit_event("stage.start", st=st)
    if st not in cfg.get("enabled", STAGES):
        raise PipelineError("stage disabled: " + st)
    emit_event("stage.done", st=st)
    return st


def run_stages(cfg):
    done = []
    for st in STAGES:
        done.append(run_single(cfg, st))
    return done
"#,
    )?;
    b.commit(
        "arch: extract stage runner from orchestrator",
        Some("architecture"),
        Some("Break the monolithic flow apart so each stage can be executed and inspected on its own."),
        Some("monolithic flow apart"),
        true,
    )?;

    // 13 — lock ordering.
    b.edit(
        "core/dispatch.py",
        "import queue\n",
        r#"import queue
import threading

_LOCKS = {}


def lock_pair(a, b):
    first, second = sorted([a, b])
    la = _LOCKS.setdefault(first, threading.Lock())
    lb = _LOCKS.setdefault(second, threading.Lock())
    la.acquire()
    lb.acquire()
    return la, lb
"#,
    )?;
    b.commit(
        "conc: guard shared state with lock acquisition order",
        Some("concurrency"),
        Some("Concurrent updates to shared bookkeeping occasionally stall each other forever; enforce a consistent acquisition discipline."),
        Some("consistent acquisition discipline"),
        true,
    )?;

    // 14 — dispatch ordering tests.
    b.write(
        "tests/test_dispatch.py",
        r#"# tests for core/dispatch following the one-file-per-module rule
import queue

from core.dispatch import dispatch_jobs, drain_queue


def test_dispatch_preserves_order():
    q = queue.Queue()
    dispatch_jobs(q, [1, 2, 3])
    assert drain_queue(q) == [1, 2, 3]


def test_drain_empty_is_empty():
    q = queue.Queue()
    assert drain_queue(q) == []
"#,
    )?;
    b.commit(
        "test: cover dispatch ordering",
        Some("testing"),
        Some("Add coverage proving work items leave the buffer in exactly the order they arrived."),
        Some("exactly the order they arrived"),
        true,
    )?;

    // 15 — accumulation clamp.
    b.edit(
        "train/loop.py",
        "MAX_STEPS = 1000\n",
        r#"MAX_STEPS = 1000
MAX_WINDOW = 64


def clamp_window(n):
    if n < 1:
        return 1
    if n > MAX_WINDOW:
        emit_event("train.clamp", n=n)
        return MAX_WINDOW
    return n
"#,
    )?;
    b.commit(
        "train: clamp gradient accumulation window",
        Some("training"),
        Some("Very long accumulation spans destabilize updates; bound the span to a safe maximum and record when that happens."),
        Some("bound the span"),
        true,
    )?;

    // 16 — verdict cache.
    b.edit(
        "judge/client.py",
        "class VerdictClient:\n    def __init__(self, url):\n        self.url = url\n",
        r#"class VerdictClient:
    def __init__(self, url):
        self.url = url
        self._memo = {}

    def cache_verdict(self, k, v):
        self._memo[k] = v
        emit_event("judge.cache", n=len(self._memo))
        return v

    def cached(self, k):
        return self._memo.get(k)

    def forget(self, k):
        self._memo.pop(k, None)
        emit_event("judge.forget", k=k)
"#,
    )?;
    b.commit(
        "judge: cache verdicts keyed by request digest",
        Some("judging"),
        Some("Avoid re-scoring identical submissions by remembering previous outcomes keyed on what was sent."),
        Some("remembering previous outcomes"),
        true,
    )?;

    // 17 — settings validation.
    b.edit(
        "configs/settings.py",
        "def load_settings(ov):\n    cfg = dict(DEFAULTS)\n    cfg.update(ov or {})\n    return cfg\n",
        r#"def check_settings(cfg):
    if cfg["budget"] <= 0:
        raise ValueError("budget must be positive")
    if cfg["fanout"] < 1:
        raise ValueError("fanout must be at least 1")
    if not cfg["enabled"]:
        raise ValueError("no stages enabled")
    return cfg


def load_settings(ov):
    cfg = dict(DEFAULTS)
    cfg.update(ov or {})
    return check_settings(cfg)
"#,
    )?;
    b.commit(
        "config: validate settings at load time",
        Some("configuration"),
        Some("Bad knob values currently surface deep inside a run; refuse obviously invalid ones up front."),
        Some("refuse obviously invalid"),
        true,
    )?;

    // 18 — launcher hardening plus executable bit (mode change + edits).
    b.edit(
        "scripts/run.sh",
        "#!/bin/sh\n# launcher for the demo pipeline\n",
        r#"#!/bin/sh
# launcher for the demo pipeline
set -eu
trap 'echo "launcher aborted" >&2' INT TERM
umask 022
if [ "${DEMO_DEBUG:-0}" = "1" ]; then
    set -x
fi
if ! command -v python >/dev/null 2>&1; then
    echo "python is required" >&2
    exit 127
fi
"#,
    )?;
    b.edit(
        "scripts/run.sh",
        "python -m core.pipeline \"$@\"\nstatus=$?\n",
        "python -m core.pipeline \"$@\"\nstatus=$?\ntest -n \"$status\" || status=1\n",
    )?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(
            dir.join("scripts/run.sh"),
            std::fs::Permissions::from_mode(0o755),
        )?;
    }
    b.commit(
        "tool: make run script executable and strict",
        Some("tooling"),
        Some("Harden the launcher so failures stop execution immediately and it can be invoked directly."),
        Some("invoked directly"),
        true,
    )?;

    // 19 — prose-only change the scripted assessor rejects.
    b.write(
        "CONTRIBUTING.md",
        r#"# Contributing

Thanks for helping out! A few ground rules:

- keep changes small and reviewed
- one logical change per commit
- describe the why in the message body
- run the launcher before sending a change
- prefer existing helpers over new ones
- new modules need a matching test file
- be kind in reviews
"#,
    )?;
    b.commit(
        "docs: update contributor guide",
        None,
        None,
        None,
        false,
    )?;

    // 20 — rename with edits.
    b.git(&["mv", "core/pipeline.py", "core/orchestrator.py"])?;
    b.edit(
        "core/orchestrator.py",
        "\"\"\"Stage flow: prepare -> collect -> score -> publish.\"\"\"\n",
        r#""""Stage flow: prepare -> collect -> score -> publish.

This module owns the whole flow; stages never import each other.
"""
"#,
    )?;
    b.edit(
        "core/orchestrator.py",
        "STAGES = [\"prepare\", \"collect\", \"score\", \"publish\"]\n",
        r#"STAGES = ["prepare", "collect", "score", "publish"]
OPTIONAL = ["publish"]


def is_optional(st):
    return st in OPTIONAL
"#,
    )?;
    b.commit(
        "arch: rename orchestrator module for clarity",
        Some("architecture"),
        Some("Give the stage-flow module a clearer home that matches what it actually owns today."),
        Some("clearer home"),
        true,
    )?;

    // 21 — bounded fanout channel.
    b.edit(
        "core/dispatch.py",
        "def drain_queue(q):",
        r#"def fanout_results(rs, cap):
    buf = queue.Queue(maxsize=cap)
    for r in rs:
        if buf.full():
            emit_event("dispatch.backpressure", cap=cap)
            buf.get()
        buf.put(r)
    return drain_queue(buf)


def drain_queue(q):"#,
    )?;
    b.commit(
        "conc: add bounded channel for result fanout",
        Some("concurrency"),
        Some("Unbounded buffering between producers and consumers risks memory blowups; cap in-flight results and shed the oldest."),
        Some("cap in-flight results"),
        true,
    )?;

    // 22 — training guard tests.
    b.write(
        "tests/test_loop.py",
        r#"# tests for train/loop following the one-file-per-module rule
from core.utils import PipelineError
from train.loop import guard_steps, train_epoch


def test_guard_allows_small():
    assert guard_steps(5) == 5


def test_guard_raises_over_budget():
    try:
        guard_steps(10**6)
        assert False
    except PipelineError:
        pass


def test_epoch_counts_items():
    assert train_epoch([[1], [2, 3]]) == 3
"#,
    )?;
    b.commit(
        "test: cover training guard edge cases",
        Some("testing"),
        Some("Add coverage for the budget protection when limits are tiny or already exceeded."),
        Some("limits are tiny"),
        true,
    )?;

    // 23 — effective lr logging (reuses emit_event convention).
    b.edit(
        "train/loop.py",
        "def train_epoch(bs):\n    total = 0\n",
        r#"BASE_LR = 0.001


def effective_lr(i):
    warm = min(1.0, (i + 1) / 10.0)
    return BASE_LR * warm


def train_epoch(bs):
    total = 0
"#,
    )?;
    b.edit(
        "train/loop.py",
        "        emit_event(\"train.step\", i=i)\n",
        "        emit_event(\"train.step\", i=i, lr=effective_lr(i))\n",
    )?;
    b.commit(
        "train: log effective learning rate each step",
        Some("training"),
        Some("Make the effective step size visible during optimization so drift is debuggable."),
        Some("step size visible"),
        true,
    )?;

    // 24 — verdict normalization.
    b.edit(
        "judge/client.py",
        "import random\n",
        r#"import random


def normalize_verdict(v):
    if isinstance(v, str):
        v = v.strip().lower()
        return v.replace("_", "-")
    return v
"#,
    )?;
    b.edit(
        "judge/client.py",
        "    def cached(self, k):\n        return self._memo.get(k)\n",
        r#"    def cached(self, k):
        return self._memo.get(k)

    def same_verdict(self, a, b):
        return normalize_verdict(a) == normalize_verdict(b)
"#,
    )?;
    b.commit(
        "judge: normalize verdict casing before compare",
        Some("judging"),
        Some("Scores sometimes disagree only by letter case; canonicalize before comparison."),
        Some("canonicalize before comparison"),
        true,
    )?;

    // 25 — env overrides.
    b.edit(
        "configs/settings.py",
        "\"\"\"Defaults live here; loaders overlay user values on top.\"\"\"\n",
        r#""""Defaults live here; loaders overlay user values on top."""

import os

ENV_PREFIX = "DEMO_"


def env_overrides():
    out = {}
    for k, v in os.environ.items():
        if k.startswith(ENV_PREFIX):
            out[k[len(ENV_PREFIX):].lower()] = v
    return out
"#,
    )?;
    b.edit(
        "configs/settings.py",
        "    cfg = dict(DEFAULTS)\n    cfg.update(ov or {})\n",
        "    cfg = dict(DEFAULTS)\n    cfg.update(env_overrides())\n    cfg.update(ov or {})\n",
    )?;
    b.commit(
        "config: support environment overrides",
        Some("configuration"),
        Some("Allow deployments to adjust knobs without editing files, via the process environment."),
        Some("without editing files"),
        true,
    )?;

    // 26 — banner asset (no trailing newline) — lands in the test pool.
    b.write(
        "configs/banner.txt",
        "demo-rl-pipeline\n=====\n  ____\n |  o |\n |____|\n  ||||\nstage flow online\nkeep calm\nand publish\nresults",
    )?;
    b.edit(
        "scripts/run.sh",
        "echo \"preparing environment\"\n",
        "cat \"$DEMO_HOME/configs/banner.txt\" || true\necho \"preparing environment\"\n",
    )?;
    b.commit(
        "tool: add startup banner asset",
        Some("tooling"),
        Some("Ship the startup art the launcher prints before doing anything interesting."),
        Some("startup art"),
        true,
    )?;

    // 27 — the rng race fix (future pool; the case-study-style task).
    b.edit(
        "judge/client.py",
        "    def poll_verdict(self, k):\n        tok = _POOL.random()\n",
        r#"    def poll_verdict(self, k):
        rng = random.Random((id(self), k))
        tok = rng.random()
"#,
    )?;
    b.edit(
        "judge/client.py",
        "_POOL = random.Random(1234)\n",
        r#"# NOTE: per-call generators only; a module-level shared generator is
# not safe when requests overlap.
"#,
    )?;
    b.edit(
        "judge/client.py",
        "        emit_event(\"judge.poll\", k=k, tok=tok)\n        return retry_call(lambda: {\"k\": k, \"tok\": tok})\n",
        r#"        emit_event("judge.poll", k=k, tok=tok)
        out = retry_call(lambda: {"k": k, "tok": tok})
        emit_event("judge.polled", k=k)
        return out
"#,
    )?;
    b.commit(
        "conc: fix shared rng race in verdict sampling",
        Some("concurrency"),
        Some("Under concurrent scoring requests the randomized draws repeat; make randomness safe when requests overlap."),
        Some("randomized draws repeat"),
        true,
    )?;

    // 28 — step guard tightening (future pool).
    b.edit(
        "train/loop.py",
        "def guard_steps(n):\n    if n > MAX_STEPS:\n        raise PipelineError(\"step budget exceeded\")\n    return n\n",
        r#"def guard_steps(n):
    if n > MAX_STEPS:
        raise PipelineError("step budget exceeded")
    if n < 0:
        raise PipelineError("negative step index")
    return n


def guard_batch(b):
    if b is None:
        raise PipelineError("missing batch reached the loop")
    if not b:
        raise PipelineError("empty batch reached the loop")
    return b
"#,
    )?;
    b.edit(
        "train/loop.py",
        "    for i, b in enumerate(bs):\n        guard_steps(i)\n",
        "    for i, b in enumerate(bs):\n        guard_steps(i)\n        guard_batch(b)\n",
    )?;
    b.commit(
        "train: tighten step guard against zero batches",
        Some("training"),
        Some("Protect the optimization budget against empty work units that currently slip through."),
        Some("empty work units"),
        true,
    )?;

    // 29 — event routing through the orchestrator (future pool).
    b.edit(
        "core/orchestrator.py",
        "def run_single(cfg, st):\n    emit_event(\"stage.start\", st=st)\n",
        r#"ROUTED = {"count": 0}


def route_event(evt, st):
    ROUTED["count"] += 1
    emit_event(evt, st=st, src="orchestrator")
    return evt


def run_single(cfg, st):
    route_event("stage.start", st)
"#,
    )?;
    b.edit(
        "core/orchestrator.py",
        "    emit_event(\"stage.done\", st=st)\n    return st\n",
        "    route_event(\"stage.done\", st)\n    return st\n",
    )?;
    b.commit(
        "arch: route stage events through orchestrator",
        Some("architecture"),
        Some("Stage progress reporting is scattered; funnel progress through the central flow component."),
        Some("funnel progress"),
        true,
    )?;

    // 30 — verdict normalization tests (future pool).
    b.write(
        "tests/test_client.py",
        r#"# tests for judge/client following the one-file-per-module rule
from judge.client import VerdictClient, normalize_verdict


def test_normalize_lowers_and_trims():
    assert normalize_verdict(" Pass ") == "pass"


def test_same_verdict_ignores_case():
    c = VerdictClient("u")
    assert c.same_verdict("PASS", "pass")


def test_non_strings_pass_through():
    assert normalize_verdict(7) == 7
"#,
    )?;
    b.commit(
        "test: cover verdict normalization",
        Some("testing"),
        Some("Add coverage for the case-insensitive score comparison introduced recently."),
        Some("case-insensitive score"),
        true,
    )?;

    // 31 — latency metric (future pool).
    b.edit(
        "judge/client.py",
        "import random\n",
        "import random\nimport time\n",
    )?;
    b.edit(
        "judge/client.py",
        "    def send_verdict(self, pl):\n        emit_event(\"judge.send\", url=self.url)\n        return retry_call(lambda: {\"ok\": True, \"pl\": pl})\n",
        r#"    def send_verdict(self, pl):
        t0 = time.monotonic()
        emit_event("judge.send", url=self.url)
        out = retry_call(lambda: {"ok": True, "pl": pl})
        dt = time.monotonic() - t0
        ms = int(dt * 1000)
        emit_event("judge.latency", ms=ms)
        if ms > 2000:
            emit_event("judge.slow", ms=ms)
        return out
"#,
    )?;
    b.commit(
        "judge: expose verdict latency metric",
        Some("judging"),
        Some("Operators want visibility into how long external scoring takes per request."),
        Some("visibility into how long"),
        true,
    )?;

    Ok(SynthRepo {
        dir: dir.to_path_buf(),
        commits: b.commits,
    })
}

// ── Scripted gateway for the corpus ─────────────────────────────────────

/// Which file the (scripted) agents edit for each planted test task, per
/// condition: the skill agent localises correctly, the baseline does not.
fn solve_targets(fragment: &str) -> Option<(&'static str, &'static str, &'static str, &'static str)> {
    // (skill file, skill anchor, baseline file, baseline anchor)
    match fragment {
        "randomized draws repeat" => Some((
            "judge/client.py",
            "# judge client: integration with the external scoring service",
            "train/loop.py",
            "# training loop for the demo pipeline",
        )),
        "funnel progress" => Some((
            "core/orchestrator.py",
            "# orchestrates stage execution for the demo pipeline",
            "configs/settings.py",
            "# settings: central tunable knobs for the demo pipeline",
        )),
        "visibility into how long" => Some((
            "judge/client.py",
            "# judge client: integration with the external scoring service",
            "core/utils.py",
            "# utils: shared event helpers for the demo pipeline",
        )),
        _ => None,
    }
}

fn edit_tool_reply(path: &str, anchor: &str) -> String {
    let call = serde_json::json!({
        "tool": "edit_file",
        "args": {"path": path, "find": anchor, "replace": format!("{anchor} (reviewed)")},
    });
    format!("I will make the change.\n```tool\n{call}\n```")
}

fn finish_tool_reply() -> String {
    "Change complete.\n```tool\n{\"tool\": \"finish\", \"args\": {\"summary\": \"done\"}}\n```".to_string()
}

fn entry(tags: &[&str], substrings: &[&str], reply: String) -> ScriptEntry {
    ScriptEntry {
        name: None,
        tags: tags.iter().map(|s| s.to_string()).collect(),
        substrings: substrings.iter().map(|s| s.to_string()).collect(),
        reply,
        uses: None,
    }
}

/// The scripted-main-backend transcript covering every pipeline stage for
/// the synthetic repository.
pub fn main_script(repo: &SynthRepo) -> ScriptFile {
    let mut entries = Vec::new();

    // Agent turns: after an applied edit, finish. Order matters — these
    // must precede the per-task edit entries.
    entries.push(entry(&["learn_attempt"], &["Applied edit to"], finish_tool_reply()));
    entries.push(entry(&["solve"], &["Applied edit to"], finish_tool_reply()));

    // Solve-phase edits: the skill agent (whose prompt carries the
    // rendered skill section) hits the oracle's file; the baseline does
    // not. Skill entries must precede baseline ones.
    for commit in &repo.commits {
        let (Some(fragment), Some(_)) = (commit.query_fragment, commit.query) else {
            continue;
        };
        if let Some((skill_file, skill_anchor, base_file, base_anchor)) = solve_targets(fragment) {
            entries.push(entry(
                &["solve"],
                &[fragment, ltc_core::skills::RENDER_HEADER],
                edit_tool_reply(skill_file, skill_anchor),
            ));
            entries.push(entry(
                &["solve", "baseline"],
                &[fragment],
                edit_tool_reply(base_file, base_anchor),
            ));
        }
    }
    // Any other solve prompt (skill without matching memory, etc.): edit
    // the README like the learn attempts do.
    entries.push(entry(
        &["solve"],
        &[],
        edit_tool_reply("README.md", "# demo-rl-pipeline"),
    ));

    // Learn attempts all make the same blind guess.
    entries.push(entry(
        &["learn_attempt"],
        &[],
        edit_tool_reply("README.md", "# demo-rl-pipeline"),
    ));

    // Reflections: one created skill per planted commit.
    for commit in &repo.commits {
        let (Some(fragment), Some(category)) = (commit.query_fragment, commit.category) else {
            continue;
        };
        let slug: String = fragment
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
            .collect();
        let ops = serde_json::json!([{
            "op": "create",
            "skill_id": format!("sk-{slug}"),
            "title": format!("Pattern behind: {}", commit.message),
            "body": format!(
                "When touching the {category} area, reuse the existing helpers (events go through emit helpers, failures raise the shared error type) instead of new plumbing."
            ),
            "kind": "internal_api",
            "category": category,
        }]);
        entries.push(entry(
            &["reflect"],
            &[fragment],
            format!(
                "Gap: the attempt edited documentation instead of the {category} code the oracle touched.\n```skill-ops\n{ops}\n```"
            ),
        ));
    }
    entries.push(entry(
        &["reflect"],
        &[],
        "Gap: nothing new to record.\n```skill-ops\n[]\n```".to_string(),
    ));

    // Quality assessment: the contributor-guide commit is prose-only.
    entries.push(entry(
        &["quality_assess"],
        &["docs: update contributor guide"],
        "```json\n{\"verdict\": \"reject\", \"rationale\": \"prose-only change with no code pattern to learn\"}\n```".to_string(),
    ));
    entries.push(entry(
        &["quality_assess"],
        &[],
        "```json\n{\"verdict\": \"accept\", \"rationale\": \"substantive repository-specific change with learnable conventions\"}\n```".to_string(),
    ));

    // Taxonomy: the seven planted categories.
    let taxonomy = serde_json::json!({"categories": [
        {"label": "architecture", "description": "module boundaries and stage flow", "exemplars": [1]},
        {"label": "concurrency", "description": "ordering, locking, backpressure", "exemplars": [1]},
        {"label": "testing", "description": "test layout and coverage", "exemplars": [1]},
        {"label": "training", "description": "optimization loop behavior", "exemplars": [1]},
        {"label": "judging", "description": "external scoring integration", "exemplars": [1]},
        {"label": "configuration", "description": "settings and overrides", "exemplars": [1]},
        {"label": "other", "description": "everything else", "exemplars": [1]},
    ]});
    entries.push(entry(&["taxonomy"], &[], format!("```json\n{taxonomy}\n```")));

    // Tagging keyed on the commit-title prefix.
    for (prefix, label) in [
        ("arch: ", "architecture"),
        ("conc: ", "concurrency"),
        ("test: ", "testing"),
        ("train: ", "training"),
        ("judge: ", "judging"),
        ("config: ", "configuration"),
        ("tool: ", "other"),
    ] {
        entries.push(entry(&["tagging"], &[prefix], label.to_string()));
    }
    entries.push(entry(&["tagging"], &[], "other".to_string()));

    // Query synthesis. The stage-runner commit first leaks a path to
    // exercise the regeneration flow; every other reply is clean.
    entries.push(ScriptEntry {
        name: Some("leak-once".into()),
        tags: ["query_synth".to_string()].into(),
        substrings: vec!["arch: extract stage runner from orchestrator".into()],
        reply: "Split core/pipeline.py so each stage runs on its own.".into(),
        uses: Some(1),
    });
    for commit in &repo.commits {
        let (Some(query), Some(_)) = (commit.query, commit.query_fragment) else {
            continue;
        };
        entries.push(entry(&["query_synth"], &[commit.message.as_str()], query.to_string()));
    }

    // Pairwise merges find no duplicates in this corpus.
    entries.push(entry(
        &["merge"],
        &[],
        "```json\n{\"duplicates\": []}\n```".to_string(),
    ));

    ScriptFile {
        policy: ExhaustionPolicy::Error,
        entries,
    }
}

/// Judge script: always prefers whichever candidate is presented first,
/// so the two-order protocol exposes the position bias symmetrically.
pub fn judge_script() -> ScriptFile {
    ScriptFile {
        policy: ExhaustionPolicy::Error,
        entries: vec![entry(
            &["judge"],
            &[],
            "A\nCandidate A tracks the oracle more closely.".to_string(),
        )],
    }
}

/// Writes the corpus config + scripts under `dir` and returns the config
/// path. Quotas are sized for the ~30-commit fixture repository.
pub fn write_pipeline_config(dir: &Path, repo: &SynthRepo) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let main = main_script(repo);
    std::fs::write(dir.join("main-script.json"), serde_json::to_string_pretty(&main)?)?;
    std::fs::write(
        dir.join("judge-script.json"),
        serde_json::to_string_pretty(&judge_script())?,
    )?;
    let config = format!(
        r#"[miner]
learn_quota = 8
test_quota = 3
cutoff = 0.8
seed = 42
rationale_sample_size = 10

[evaluate]
judges = ["judge1", "judge2"]

[gateway]
cache_dir = "{cache}"
default_backend = "main"

[backends.main]
kind = "scripted"
script = "main-script.json"

[backends.judge1]
kind = "scripted"
script = "judge-script.json"

[backends.judge2]
kind = "scripted"
script = "judge-script.json"
"#,
        cache = dir.join("cache").display(),
    );
    let path = dir.join("ltc.toml");
    std::fs::write(&path, config)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ltc_core::leakage::scan_query;
    use ltc_core::mining::Quality;

    #[test]
    fn corpus_is_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let repo = build_synth_repo(&dir.path().join("repo")).unwrap();
        assert_eq!(repo.commits.len(), 31);
        let substantive = repo.commits.iter().filter(|c| c.accepted).count();
        assert_eq!(substantive, 26);

        // Every planted query passes the leakage scan against its own
        // oracle patch, and every substantive commit clears the prefilter.
        let records =
            crate::miner::scan_history(&repo.dir, None, 4).unwrap();
        assert_eq!(records.len(), repo.commits.len());
        let rules = ltc_core::mining::PrefilterConfig::default();
        for planted in &repo.commits {
            let record = records
                .iter()
                .find(|r| r.commit_id == planted.commit_id)
                .unwrap();
            if let Some(query) = planted.query {
                let hits = scan_query(query, &record.patch);
                assert!(
                    hits.is_empty(),
                    "query for {:?} leaks: {:?}",
                    planted.message,
                    hits
                );
                let filtered = ltc_core::mining::prefilter(record.clone(), &rules);
                assert!(
                    matches!(filtered.quality, Quality::Unassessed),
                    "{:?} unexpectedly prefiltered: {:?}",
                    planted.message,
                    filtered.quality
                );
            }
        }

        // The planted rejects do get prefiltered.
        let bump = repo
            .commits
            .iter()
            .find(|c| c.message.contains("bump dependency pins"))
            .unwrap();
        let record = records.iter().find(|r| r.commit_id == bump.commit_id).unwrap();
        let filtered = ltc_core::mining::prefilter(record.clone(), &rules);
        assert!(
            matches!(&filtered.quality, Quality::RejectedPrefilter { reason } if reason == "version_bump"),
            "{:?}",
            filtered.quality
        );
    }

    #[test]
    fn oracle_patches_apply_onto_parents() {
        let dir = tempfile::tempdir().unwrap();
        let repo = build_synth_repo(&dir.path().join("repo")).unwrap();
        let records = crate::miner::scan_history(&repo.dir, None, 4).unwrap();
        for record in &records {
            let wt = crate::worktree::Worktree::create(
                &repo.dir,
                &record.parent_id,
                dir.path().join(format!("wt-{}", &record.commit_id[..8])),
            )
            .unwrap();
            crate::worktree::apply_patch(&wt.dir, &record.patch)
                .unwrap_or_else(|e| panic!("{} failed: {e}", record.message));
            let tree = wt.tree_hash().unwrap();
            let expected = crate::gitio::commit_tree_hash(&repo.dir, &record.commit_id).unwrap();
            assert_eq!(tree, expected, "tree mismatch for {:?}", record.message);
            wt.cleanup().unwrap();
        }
    }
}
