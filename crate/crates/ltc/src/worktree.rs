//! Task worktrees: one clean checkout of a snapshot per task, plus
//! on-disk patch application with rollback.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ltc_core::diff::{apply_to_tree, file_set, ChangeKind, ConflictReport, Patch};

use crate::gitio;

/// A detached checkout of one snapshot, removed on [`Worktree::cleanup`].
pub struct Worktree {
    pub dir: PathBuf,
    /// The clone the worktree is registered with; `None` for the
    /// empty-tree snapshot, which is materialized as a standalone repo.
    owner_repo: Option<PathBuf>,
}

impl Worktree {
    /// Checks out `snapshot` under `dir`. The empty-tree hash (parent of a
    /// root commit) yields a fresh repo with one empty commit so that diff
    /// capture works uniformly.
    pub fn create(repo: &Path, snapshot: &str, dir: PathBuf) -> Result<Worktree> {
        if dir.exists() {
            bail!("worktree dir {} already exists", dir.display());
        }
        if snapshot == gitio::EMPTY_TREE {
            std::fs::create_dir_all(&dir)?;
            gitio::git(&dir, &["init", "-q"])?;
            gitio::git(&dir, &["config", "user.name", "ltc"])?;
            gitio::git(&dir, &["config", "user.email", "ltc@localhost"])?;
            gitio::git(&dir, &["commit", "-q", "--allow-empty", "-m", "snapshot"])?;
            return Ok(Worktree {
                dir,
                owner_repo: None,
            });
        }
        std::fs::create_dir_all(dir.parent().context("worktree dir has no parent")?)?;
        gitio::worktree_add(repo, &dir, snapshot)?;
        Ok(Worktree {
            dir,
            owner_repo: Some(repo.to_path_buf()),
        })
    }

    /// Diff of the current worktree contents against its snapshot.
    pub fn capture_diff(&self) -> Result<Patch> {
        let text = gitio::worktree_diff(&self.dir)?;
        ltc_core::diff::parse_patch(&text)
            .with_context(|| "worktree diff did not parse; git output changed?")
    }

    pub fn tree_hash(&self) -> Result<String> {
        gitio::worktree_tree_hash(&self.dir)
    }

    pub fn cleanup(self) -> Result<()> {
        match &self.owner_repo {
            Some(repo) => gitio::worktree_remove(repo, &self.dir),
            None => {
                std::fs::remove_dir_all(&self.dir)?;
                Ok(())
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApplyError {
    #[error("{0}")]
    Conflict(#[from] ConflictReport),
    #[error("file {path} is not valid utf-8; text patching cannot apply")]
    NonUtf8 { path: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Applies a parsed patch to files on disk under `root`.
///
/// The patch is first applied in memory against only the files it names;
/// nothing touches the disk unless every hunk applies, so a conflict
/// leaves the tree untouched. Mode headers (100755/100644) are honored.
pub fn apply_patch(root: &Path, patch: &Patch) -> Result<(), ApplyError> {
    let mut tree: BTreeMap<String, String> = BTreeMap::new();
    for path in file_set(patch) {
        let disk = root.join(&path);
        if disk.exists() {
            let bytes = std::fs::read(&disk)?;
            let content = String::from_utf8(bytes).map_err(|_| ApplyError::NonUtf8 {
                path: path.clone(),
            })?;
            tree.insert(path, content);
        }
    }

    let patched = apply_to_tree(&tree, patch)?;

    // All hunks verified; write the delta.
    for removed in tree.keys().filter(|p| !patched.contains_key(*p)) {
        std::fs::remove_file(root.join(removed))?;
    }
    for (path, content) in &patched {
        if tree.get(path) == Some(content) {
            continue;
        }
        let disk = root.join(path);
        if let Some(parent) = disk.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&disk, content)?;
    }

    #[cfg(unix)]
    apply_modes(root, patch)?;
    Ok(())
}

#[cfg(unix)]
fn apply_modes(root: &Path, patch: &Patch) -> Result<(), ApplyError> {
    use std::os::unix::fs::PermissionsExt;
    for file in &patch.files {
        let Some(mode) = file.new_mode.as_deref() else {
            continue;
        };
        let Some(path) = file.effective_path() else {
            continue;
        };
        let disk = root.join(path);
        if !disk.exists() {
            continue;
        }
        let bits = if mode.ends_with("755") { 0o755 } else { 0o644 };
        std::fs::set_permissions(&disk, std::fs::Permissions::from_mode(bits))?;
    }
    Ok(())
}

/// Flags a patch that only our applier cannot handle (binary payloads).
pub fn has_unapplicable_files(patch: &Patch) -> bool {
    patch.files.iter().any(|f| f.change_kind == ChangeKind::Binary)
}
