//! Reactive grounding trigger.
//!
//! Before and after every executor run the controller hashes the tracked
//! public files (paper sources and READMEs). Any difference forces the
//! grounding pair onto the queue, unless the step that made the change was
//! itself a grounding pass.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::SystemTime;

use globset::{GlobBuilder, GlobSet, GlobSetBuilder};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::alphabet::{Symbol, GROUNDING_PAIR};
use crate::canonical::sha256_hex;

pub const DEFAULT_TRACKED: [&str; 3] = ["paper/**/*.tex", "README.md", "*/README.md"];

pub fn default_tracked_patterns() -> Vec<String> {
    DEFAULT_TRACKED.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum TriggerError {
    #[error("invalid tracked pattern `{pattern}`: {source}")]
    Pattern { pattern: String, source: globset::Error },
    #[error("{0} is not a git working tree and auto-init is disabled")]
    NotAGitTree(String),
    #[error("git {action} failed: {detail}")]
    Git { action: String, detail: String },
    #[error("snapshots were taken with different tracked patterns")]
    PatternMismatch,
    #[error("i/o error while hashing {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Compiled set of tracked path patterns, matched against `/`-separated
/// paths relative to the workspace root. `*` never crosses a `/`.
#[derive(Debug, Clone)]
pub struct TrackedPatterns {
    patterns: Vec<String>,
    set: GlobSet,
}

impl TrackedPatterns {
    pub fn new<I, S>(patterns: I) -> Result<Self, TriggerError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let patterns: Vec<String> = patterns.into_iter().map(Into::into).collect();
        let mut builder = GlobSetBuilder::new();
        for p in &patterns {
            let glob = GlobBuilder::new(p)
                .literal_separator(true)
                .build()
                .map_err(|source| TriggerError::Pattern {
                    pattern: p.clone(),
                    source,
                })?;
            builder.add(glob);
        }
        let set = builder.build().map_err(|source| TriggerError::Pattern {
            pattern: patterns.join(","),
            source,
        })?;
        Ok(TrackedPatterns { patterns, set })
    }

    pub fn default_set() -> Self {
        Self::new(DEFAULT_TRACKED).expect("default patterns compile")
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn is_match(&self, rel_path: &str) -> bool {
        self.set.is_match(rel_path)
    }

    /// Sorted relative paths of every regular file under `root` matching the
    /// patterns. Hidden directories (`.git`, `.cesm`, ...) are skipped.
    pub fn matching_files(&self, root: &Path) -> Vec<String> {
        let mut out: Vec<String> = WalkDir::new(root)
            .min_depth(1)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| e.depth() == 0 || !is_hidden(e.file_name()))
            .filter_map(Result::ok)
            .filter(|e| e.file_type().is_file())
            .filter_map(|e| relative(root, e.path()))
            .filter(|rel| self.is_match(rel))
            .collect();
        out.sort();
        out
    }
}

pub(crate) fn is_hidden(name: &std::ffi::OsStr) -> bool {
    name.to_str().is_some_and(|s| s.starts_with('.'))
}

pub(crate) fn relative(root: &Path, path: &Path) -> Option<String> {
    let rel = path.strip_prefix(root).ok()?;
    let parts: Vec<&str> = rel.iter().map(|c| c.to_str()).collect::<Option<_>>()?;
    Some(parts.join("/"))
}

/// Content-addressed view of the tracked files at one instant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GitSnapshot {
    /// `HEAD` commit id, if the tree has any commit.
    pub head: Option<String>,
    /// Digest over the whole file map; stands in for a commit id on dirty trees.
    pub tree_hash: String,
    pub files: BTreeMap<String, String>,
    pub patterns: Vec<String>,
    #[serde(skip, default = "SystemTime::now")]
    pub captured_at: SystemTime,
}

impl PartialEq for GitSnapshot {
    fn eq(&self, other: &Self) -> bool {
        self.head == other.head
            && self.tree_hash == other.tree_hash
            && self.files == other.files
            && self.patterns == other.patterns
    }
}

/// Hash every tracked file's working-tree content. Does not require git.
pub fn hash_tracked(root: &Path, tracked: &TrackedPatterns) -> Result<BTreeMap<String, String>, TriggerError> {
    tracked
        .matching_files(root)
        .into_iter()
        .map(|rel| {
            let bytes = fs::read(root.join(&rel)).map_err(|source| TriggerError::Io {
                path: rel.clone(),
                source,
            })?;
            Ok((rel, sha256_hex(&bytes)))
        })
        .collect()
}

pub fn snapshot(root: &Path, tracked: &TrackedPatterns, auto_init: bool) -> Result<GitSnapshot, TriggerError> {
    ensure_git_tree(root, auto_init)?;
    let files = hash_tracked(root, tracked)?;
    let tree_hash = sha256_hex(
        files
            .iter()
            .map(|(k, v)| format!("{k}\0{v}\n"))
            .collect::<String>()
            .as_bytes(),
    );
    Ok(GitSnapshot {
        head: git_head(root),
        tree_hash,
        files,
        patterns: tracked.patterns().to_vec(),
        captured_at: SystemTime::now(),
    })
}

/// Changed tracked paths between two snapshots.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffReport {
    pub changed_paths: Vec<String>,
    pub public_change: bool,
}

impl DiffReport {
    pub fn paper_changed(&self) -> bool {
        self.changed_paths.iter().any(|p| p.ends_with(".tex"))
    }

    pub fn readme_changed(&self) -> bool {
        self.changed_paths
            .iter()
            .any(|p| p.rsplit('/').next() == Some("README.md"))
    }
}

pub fn detect_public_diff(before: &GitSnapshot, after: &GitSnapshot) -> Result<DiffReport, TriggerError> {
    if before.patterns != after.patterns {
        return Err(TriggerError::PatternMismatch);
    }
    Ok(diff_file_maps(&before.files, &after.files))
}

pub fn diff_file_maps(before: &BTreeMap<String, String>, after: &BTreeMap<String, String>) -> DiffReport {
    let mut changed: Vec<String> = before
        .iter()
        .filter(|(path, hash)| after.get(*path) != Some(*hash))
        .map(|(path, _)| path.clone())
        .chain(after.keys().filter(|p| !before.contains_key(*p)).cloned())
        .collect();
    changed.sort();
    changed.dedup();
    DiffReport {
        public_change: !changed.is_empty(),
        changed_paths: changed,
    }
}

/// The grounding pair when a public change was made by anything other than
/// a grounding pass.
pub fn forced_injection(report: &DiffReport, executed: Symbol) -> Vec<Symbol> {
    if report.public_change && !executed.is_grounding_pass() {
        GROUNDING_PAIR.to_vec()
    } else {
        Vec::new()
    }
}

fn git(root: &Path, args: &[&str]) -> Result<std::process::Output, TriggerError> {
    Command::new("git")
        .arg("-C")
        .arg(root)
        .args(args)
        .output()
        .map_err(|e| TriggerError::Git {
            action: args.first().copied().unwrap_or("").to_string(),
            detail: e.to_string(),
        })
}

fn checked_git(root: &Path, args: &[&str]) -> Result<(), TriggerError> {
    let out = git(root, args)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(TriggerError::Git {
            action: args.first().copied().unwrap_or("").to_string(),
            detail: String::from_utf8_lossy(&out.stderr).trim().to_string(),
        })
    }
}

pub fn is_git_tree(root: &Path) -> bool {
    root.join(".git").exists()
}

/// Initialize `root` as a git tree if needed. Controller bookkeeping under
/// `.cesm/` is excluded from commits.
pub fn ensure_git_tree(root: &Path, auto_init: bool) -> Result<(), TriggerError> {
    if is_git_tree(root) {
        return Ok(());
    }
    if !auto_init {
        return Err(TriggerError::NotAGitTree(root.display().to_string()));
    }
    checked_git(root, &["init", "-q"])?;
    let exclude = root.join(".git/info/exclude");
    let mut text = fs::read_to_string(&exclude).unwrap_or_default();
    if !text.lines().any(|l| l.trim() == ".cesm/") {
        text.push_str(".cesm/\n");
        fs::create_dir_all(root.join(".git/info")).map_err(|source| TriggerError::Io {
            path: ".git/info".into(),
            source,
        })?;
        fs::write(&exclude, text).map_err(|source| TriggerError::Io {
            path: ".git/info/exclude".into(),
            source,
        })?;
    }
    Ok(())
}

pub fn git_head(root: &Path) -> Option<String> {
    let out = git(root, &["rev-parse", "--verify", "-q", "HEAD"]).ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
}

/// Per-step bookkeeping commit: `step=<t> symbol=<p>`.
pub fn commit_step(root: &Path, step: u64, symbol: Symbol) -> Result<(), TriggerError> {
    checked_git(root, &["add", "-A"])?;
    let message = format!("step={step} symbol={symbol}");
    checked_git(
        root,
        &[
            "-c",
            "user.name=cesm",
            "-c",
            "user.email=cesm@localhost",
            "commit",
            "-q",
            "--allow-empty",
            "--no-verify",
            "-m",
            &message,
        ],
    )
}
