//! Thin wrappers around the `git` CLI. The pipeline only ever reads local
//! repositories; no network operations are issued.

use std::path::Path;
use std::process::Command;

use anyhow::{bail, Context, Result};

/// Hash of git's empty tree; serves as the parent snapshot of root commits.
pub const EMPTY_TREE: &str = "4b825dc642cb6eb9a060e54bf8d69288fbee4904";

pub fn git(repo: &Path, args: &[&str]) -> Result<String> {
    let output = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(args)
        .env("GIT_TERMINAL_PROMPT", "0")
        .output()
        .with_context(|| format!("running git {args:?}"))?;
    if !output.status.success() {
        bail!(
            "git {:?} in {} failed: {}",
            args,
            repo.display(),
            String::from_utf8_lossy(&output.stderr).trim()
        );
    }
    Ok(String::from_utf8_lossy(&output.stdout).into_owned())
}

pub fn is_repository(path: &Path) -> bool {
    path.is_dir() && git(path, &["rev-parse", "--git-dir"]).is_ok()
}

pub fn head_commit(repo: &Path) -> Result<String> {
    Ok(git(repo, &["rev-parse", "HEAD"])?.trim().to_string())
}

#[derive(Debug, Clone)]
pub struct RawCommit {
    pub id: String,
    pub parents: Vec<String>,
    pub author_time: i64,
    pub message: String,
}

/// Full non-merge commit history (ascending author time), optionally
/// restricted to a commit range.
pub fn log_non_merge(repo: &Path, range: Option<&str>) -> Result<Vec<RawCommit>> {
    let mut args = vec![
        "log",
        "--no-merges",
        "--date-order",
        "--pretty=format:%H%x00%P%x00%at%x00%B%x1e",
    ];
    if let Some(range) = range {
        args.push(range);
    }
    let out = git(repo, &args)?;
    let mut commits = Vec::new();
    for record in out.split('\u{1e}') {
        let record = record.trim_start_matches(['\n', '\r']);
        if record.is_empty() {
            continue;
        }
        let mut fields = record.splitn(4, '\u{0}');
        let id = fields.next().unwrap_or_default().trim().to_string();
        let parents: Vec<String> = fields
            .next()
            .unwrap_or_default()
            .split_whitespace()
            .map(String::from)
            .collect();
        let author_time: i64 = fields
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .with_context(|| format!("bad author time for {id}"))?;
        let message = fields.next().unwrap_or_default().trim_end().to_string();
        if id.is_empty() {
            continue;
        }
        // --no-merges already drops these; keep the guarantee local.
        if parents.len() > 1 {
            continue;
        }
        commits.push(RawCommit {
            id,
            parents,
            author_time,
            message,
        });
    }
    commits.sort_by(|a, b| a.author_time.cmp(&b.author_time).then(a.id.cmp(&b.id)));
    Ok(commits)
}

/// Unified diff between two tree-ishes, with rename detection.
pub fn diff_between(repo: &Path, from: &str, to: &str) -> Result<String> {
    git(
        repo,
        &["diff", "--no-color", "--find-renames", "--no-ext-diff", from, to],
    )
}

pub fn commit_tree_hash(repo: &Path, commit: &str) -> Result<String> {
    Ok(git(repo, &["rev-parse", &format!("{commit}^{{tree}}")])?
        .trim()
        .to_string())
}

/// Local clone used as the run's private workspace, so worktrees never
/// touch the target repository.
pub fn clone_local(src: &Path, dst: &Path) -> Result<()> {
    let output = Command::new("git")
        .arg("clone")
        .arg("--quiet")
        .arg("--no-checkout")
        .arg(src)
        .arg(dst)
        .env("GIT_TERMINAL_PROMPT", "0")
        .output()
        .context("running git clone")?;
    if !output.status.success() {
        bail!(
            "git clone {} -> {} failed: {}",
            src.display(),
            dst.display(),
            String::from_utf8_lossy(&output.stderr).trim()
        );
    }
    Ok(())
}

pub fn worktree_add(repo: &Path, dir: &Path, commit: &str) -> Result<()> {
    git(
        repo,
        &[
            "worktree",
            "add",
            "--detach",
            dir.to_str().context("worktree path is not utf-8")?,
            commit,
        ],
    )?;
    Ok(())
}

pub fn worktree_remove(repo: &Path, dir: &Path) -> Result<()> {
    git(
        repo,
        &[
            "worktree",
            "remove",
            "--force",
            dir.to_str().context("worktree path is not utf-8")?,
        ],
    )?;
    Ok(())
}

/// Stages everything and returns the diff of the (staged) worktree state
/// against its checked-out snapshot commit.
pub fn worktree_diff(dir: &Path) -> Result<String> {
    git(dir, &["add", "-A"])?;
    git(
        dir,
        &["diff", "--cached", "--no-color", "--find-renames", "--no-ext-diff"],
    )
}

/// Stages everything and hashes the resulting tree.
pub fn worktree_tree_hash(dir: &Path) -> Result<String> {
    git(dir, &["add", "-A"])?;
    Ok(git(dir, &["write-tree"])?.trim().to_string())
}

#[cfg(test)]
pub(crate) mod testrepo {
    use super::*;
    use std::path::PathBuf;

    /// Builds a scratch repo for unit tests; commits get deterministic
    /// hour-spaced timestamps.
    pub struct TestRepo {
        pub dir: tempfile::TempDir,
        commit_count: u32,
    }

    impl TestRepo {
        pub fn new() -> TestRepo {
            let dir = tempfile::tempdir().unwrap();
            let repo = TestRepo {
                dir,
                commit_count: 0,
            };
            repo.git(&["init", "-q", "-b", "main"]);
            repo.git(&["config", "user.name", "Test"]);
            repo.git(&["config", "user.email", "test@example.invalid"]);
            repo.git(&["config", "commit.gpgsign", "false"]);
            repo
        }

        pub fn path(&self) -> PathBuf {
            self.dir.path().to_path_buf()
        }

        pub fn git(&self, args: &[&str]) -> String {
            git(self.dir.path(), args).unwrap()
        }

        pub fn write(&self, rel: &str, content: &str) {
            let path = self.dir.path().join(rel);
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(path, content).unwrap();
        }

        fn next_stamp(&mut self) -> String {
            self.commit_count += 1;
            // 2024-01-01T00:00:00Z plus one hour per commit.
            chrono::DateTime::from_timestamp(1_704_067_200 + self.commit_count as i64 * 3600, 0)
                .unwrap()
                .to_rfc3339()
        }

        pub fn commit(&mut self, message: &str) -> String {
            let stamp = self.next_stamp();
            self.git(&["add", "-A"]);
            git_env_commit(self.dir.path(), message, &stamp).unwrap();
            self.git(&["rev-parse", "HEAD"]).trim().to_string()
        }

        pub fn merge_commit(&mut self, branch: &str, message: &str) -> String {
            let stamp = self.next_stamp();
            let out = Command::new("git")
                .arg("-C")
                .arg(self.dir.path())
                .args(["merge", "--no-ff", "-m", message, branch])
                .env("GIT_AUTHOR_DATE", &stamp)
                .env("GIT_COMMITTER_DATE", &stamp)
                .output()
                .unwrap();
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            self.git(&["rev-parse", "HEAD"]).trim().to_string()
        }
    }

    pub fn git_env_commit(repo: &Path, message: &str, date: &str) -> Result<()> {
        let output = Command::new("git")
            .arg("-C")
            .arg(repo)
            .args(["commit", "-q", "--allow-empty", "-m", message])
            .env("GIT_AUTHOR_DATE", date)
            .env("GIT_COMMITTER_DATE", date)
            .output()?;
        if !output.status.success() {
            bail!("commit failed: {}", String::from_utf8_lossy(&output.stderr));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::testrepo::TestRepo;
    use super::*;

    #[test]
    fn log_excludes_merges_and_sorts_ascending() {
        let mut repo = TestRepo::new();
        repo.write("a.txt", "one\n");
        let c1 = repo.commit("first");
        repo.write("a.txt", "one\ntwo\n");
        let c2 = repo.commit("second");
        repo.git(&["checkout", "-q", "-b", "side", &c1]);
        repo.write("b.txt", "side\n");
        let _side = repo.commit("side work");
        repo.git(&["checkout", "-q", "main"]);
        let _merge = repo.merge_commit("side", "merge side");

        let commits = log_non_merge(&repo.path(), None).unwrap();
        assert_eq!(commits.len(), 3, "merge commit excluded");
        assert!(commits.windows(2).all(|w| w[0].author_time <= w[1].author_time));
        assert!(commits.iter().any(|c| c.id == c2));
        assert!(commits.iter().all(|c| c.parents.len() <= 1));
    }

    #[test]
    fn diff_between_produces_parseable_patch() {
        let mut repo = TestRepo::new();
        repo.write("f.py", "def one():\n    return 1\n");
        let c1 = repo.commit("add f");
        repo.write("f.py", "def one():\n    return 1\n\n\ndef two():\n    return 2\n");
        let c2 = repo.commit("add two");
        let diff = diff_between(&repo.path(), &c1, &c2).unwrap();
        let patch = ltc_core::diff::parse_patch(&diff).unwrap();
        assert_eq!(patch.files.len(), 1);
        assert_eq!(patch.files[0].added_lines, 4);
        assert_eq!(patch.to_unified(), diff, "git output round-trips");
    }

    #[test]
    fn not_a_repository_detected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(!is_repository(dir.path()));
    }
}
