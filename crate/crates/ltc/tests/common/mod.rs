//! Shared harness for integration tests: a tiny deterministic repo, task
//! specs derived from its commits, and a scripted gateway.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use ltc::gateway::{ExhaustionPolicy, Gateway, ScriptEntry, ScriptedBackend};
use ltc_core::mining::{Pool, TaskSpec};

pub struct Lab {
    #[allow(dead_code)] // keeps the tempdir alive for the test
    pub dir: tempfile::TempDir,
    pub repo: PathBuf,
    pub out: PathBuf,
    pub tasks: Vec<TaskSpec>,
}

fn git(repo: &Path, args: &[&str]) -> String {
    let out = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(args)
        .output()
        .expect("git runs");
    assert!(
        out.status.success(),
        "git {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn commit(repo: &Path, message: &str, seq: i64) -> String {
    git(repo, &["add", "-A"]);
    let date = format!("{} +0000", 1_700_000_000 + seq * 3600);
    let out = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(["commit", "-q", "-m", message])
        .env("GIT_AUTHOR_DATE", &date)
        .env("GIT_COMMITTER_DATE", &date)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    git(repo, &["rev-parse", "HEAD"]).trim().to_string()
}

/// `n_tasks` learning tasks, one per commit; each commit adds a block to
/// its own module file so oracle file sets are disjoint per task.
pub fn lab(n_tasks: usize) -> Lab {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("repo");
    std::fs::create_dir_all(&repo).unwrap();
    git(&repo, &["init", "-q", "-b", "main"]);
    git(&repo, &["config", "user.name", "lab"]);
    git(&repo, &["config", "user.email", "lab@test.invalid"]);

    std::fs::write(repo.join("README.md"), "# lab-repo anchor line\n").unwrap();
    let mut prev = commit(&repo, "base", 0);

    let mut tasks = Vec::new();
    for i in 0..n_tasks {
        let rel = format!("mod_{i}.py");
        let content: String = (0..12)
            .map(|l| format!("def helper_{i}_{l}():\n    return {l}\n\n"))
            .take(6)
            .collect();
        std::fs::write(repo.join(&rel), content).unwrap();
        let id = commit(&repo, &format!("add module {i}"), i as i64 + 1);
        let diff = git(&repo, &["diff", "--no-color", &prev, &id]);
        tasks.push(TaskSpec {
            task_id: format!("task-{i}"),
            commit_id: id.clone(),
            pool: Pool::Learn,
            category: ["alpha", "beta"][i % 2].to_string(),
            query: format!("please implement capability number {i} cleanly"),
            snapshot_ref: prev.clone(),
            oracle_patch: ltc_core::diff::parse_patch(&diff).unwrap(),
        });
        prev = id;
    }

    let out = dir.path().join("out");
    Lab {
        dir,
        repo,
        out,
        tasks,
    }
}

pub fn entry(tags: &[&str], substrings: &[&str], reply: impl Into<String>) -> ScriptEntry {
    ScriptEntry {
        name: None,
        tags: tags.iter().map(|s| s.to_string()).collect(),
        substrings: substrings.iter().map(|s| s.to_string()).collect(),
        reply: reply.into(),
        uses: None,
    }
}

pub fn edit_reply(path: &str, find: &str, replace: &str) -> String {
    let call = serde_json::json!({
        "tool": "edit_file",
        "args": {"path": path, "find": find, "replace": replace},
    });
    format!("```tool\n{call}\n```")
}

pub fn finish_reply() -> String {
    "```tool\n{\"tool\": \"finish\", \"args\": {}}\n```".to_string()
}

pub fn create_ops_reply(skill_id: &str, category: &str) -> String {
    format!(
        "Gap noted.\n```skill-ops\n[{{\"op\": \"create\", \"skill_id\": \"{skill_id}\", \"title\": \"t {skill_id}\", \"body\": \"b {skill_id} end\", \"kind\": \"architecture\", \"category\": \"{category}\"}}]\n```"
    )
}

/// Gateway whose main backend answers attempts (edit README then finish),
/// reflections (one create per task), and merges (no duplicates).
pub fn learning_gateway(tasks: &[TaskSpec], cache_dir: Option<PathBuf>) -> Gateway {
    let mut entries = vec![
        entry(&["learn_attempt"], &["Applied edit to"], finish_reply()),
        entry(&["solve"], &["Applied edit to"], finish_reply()),
        entry(
            &["learn_attempt"],
            &[],
            edit_reply("README.md", "# lab-repo anchor line", "# lab-repo anchor line!"),
        ),
        entry(
            &["solve"],
            &[],
            edit_reply("README.md", "# lab-repo anchor line", "# lab-repo anchor line!"),
        ),
    ];
    for task in tasks {
        entries.push(entry(
            &["reflect"],
            &[task.query.as_str()],
            create_ops_reply(&format!("sk-{}", task.task_id), &task.category),
        ));
    }
    entries.push(entry(&["reflect"], &[], "nothing\n```skill-ops\n[]\n```"));
    entries.push(entry(&["merge"], &[], "```json\n{\"duplicates\": []}\n```"));

    let gateway = Gateway::new(cache_dir);
    gateway.register_backend(
        "main",
        Arc::new(ScriptedBackend::new(entries, ExhaustionPolicy::Error)),
    );
    gateway
}
