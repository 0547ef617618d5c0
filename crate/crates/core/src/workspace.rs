//! Reads the on-disk workspace into a [`WorkspaceSummary`].
//!
//! File conventions, all relative to the workspace root:
//!
//! | surface | convention |
//! |---|---|
//! | theory | `THEORY.md` at the root or at a repo root |
//! | repos | immediate subdirectories holding a build manifest |
//! | installability | manifest present and `build-status.json` marks the repo `true` |
//! | paper | any `*.tex` under `paper/` |
//! | README | `README.md` at the root and at each repo root |
//! | benchmarks | files below a `bench`, `benches`, `benchmark` or `benchmarks` directory |
//! | ledger | `grounding.json` |
//! | tests | `test-report.json` (`{"passed": n, "failed": m}`) |
//! | utility hypothesis | `UTILITY.md` |
//! | open obligations | list items in `OBLIGATIONS.md` |
//!
//! Hidden directories and build output (`target`, `node_modules`, ...) are
//! never read. Summaries are pure functions of disk content and the step.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::canonical::canonical_digest;
use crate::ledger::{audit_claims, AuditOptions, Ledger, LEDGER_FILE};
use crate::trigger::{is_hidden, relative, TrackedPatterns};

pub const THEORY_FILE: &str = "THEORY.md";
pub const UTILITY_FILE: &str = "UTILITY.md";
pub const OBLIGATIONS_FILE: &str = "OBLIGATIONS.md";
pub const TEST_REPORT_FILE: &str = "test-report.json";
pub const BUILD_STATUS_FILE: &str = "build-status.json";
/// Written by the orchestrator: last step that changed a tracked public file.
pub const PUBLIC_MARKER: &str = ".cesm/public-modified";

pub const MANIFESTS: [&str; 7] = [
    "Cargo.toml",
    "pyproject.toml",
    "setup.py",
    "package.json",
    "go.mod",
    "CMakeLists.txt",
    "Makefile",
];

const SKIP_DIRS: [&str; 7] = [
    "target",
    "node_modules",
    "build",
    "dist",
    "__pycache__",
    "venv",
    "paper",
];

const SOURCE_EXTS: [&str; 22] = [
    "rs", "py", "c", "h", "cc", "cpp", "hpp", "go", "js", "ts", "java", "jl", "ml", "hs", "scala", "kt", "rb", "sh",
    "cs", "swift", "r", "lean",
];

const BENCH_DIRS: [&str; 4] = ["bench", "benches", "benchmark", "benchmarks"];

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error("cannot read workspace root {path}: {source}")]
    Unreadable { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TheorySurface {
    pub present: bool,
    pub documents: Vec<String>,
    pub word_count: u64,
    /// Number of `## ` sections across theory documents.
    pub revision_count: u64,
    /// First `Thesis:` line (or the line after a `# Thesis` heading).
    pub thesis: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepoInfo {
    pub name: String,
    pub loc: u64,
    pub test_files: Vec<String>,
    pub has_readme: bool,
    pub installable: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepoSurface {
    pub repos: Vec<RepoInfo>,
}

impl RepoSurface {
    pub fn total_loc(&self) -> u64 {
        self.repos.iter().map(|r| r.loc).sum()
    }

    pub fn test_file_count(&self) -> u64 {
        self.repos.iter().map(|r| r.test_files.len() as u64).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PublicSurface {
    pub paper_files: Vec<String>,
    pub paper_words: u64,
    pub readme_files: Vec<String>,
    pub readme_words: u64,
    pub last_modified_step: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSurface {
    pub benchmark_files: Vec<String>,
    pub ledger_path: Option<String>,
    pub ledger_valid: bool,
    pub claim_count: u64,
    pub public_literals: u64,
    pub grounded_claim_ratio: f64,
    pub test_pass_ratio: f64,
}

impl EvidenceSurface {
    pub fn benchmark_count(&self) -> u64 {
        self.benchmark_files.len() as u64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UtilityHypothesis {
    pub present: bool,
    pub text: String,
}

/// The measured workspace at one controller step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceSummary {
    pub theory: TheorySurface,
    pub repo_forest: RepoSurface,
    pub public_projection: PublicSurface,
    pub evidence: EvidenceSurface,
    pub utility_hypothesis: UtilityHypothesis,
    pub open_obligations: Vec<String>,
    pub snapshot_step: u64,
}

impl WorkspaceSummary {
    pub fn digest(&self) -> String {
        canonical_digest(self).expect("summary serializes")
    }

    pub fn has_paper_skeleton(&self) -> bool {
        !self.public_projection.paper_files.is_empty()
    }

    /// Repos that are installable and carry a README.
    pub fn built_repo_count(&self) -> usize {
        self.repo_forest
            .repos
            .iter()
            .filter(|r| r.installable && r.has_readme)
            .count()
    }

    /// Any test or benchmark file path, relative to the root.
    pub fn has_test_or_bench(&self, rel: &str) -> bool {
        self.repo_forest
            .repos
            .iter()
            .any(|r| r.test_files.iter().any(|t| t == rel))
            || self.evidence.benchmark_files.iter().any(|b| b == rel)
    }
}

fn read_text(path: &Path) -> Option<String> {
    fs::read(path).ok().map(|b| String::from_utf8_lossy(&b).into_owned())
}

fn words(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

fn thesis_of(text: &str) -> Option<String> {
    let mut after_heading = false;
    for line in text.lines() {
        let t = line.trim();
        if after_heading && !t.is_empty() {
            return Some(t.to_string());
        }
        let lower = t.to_ascii_lowercase();
        if lower.starts_with("thesis:") {
            // ASCII lowering keeps byte offsets, so the prefix length carries over.
            return Some(t["thesis:".len()..].trim().to_string()).filter(|s| !s.is_empty());
        }
        if lower.starts_with('#') && lower.trim_start_matches('#').trim() == "thesis" {
            after_heading = true;
        }
    }
    None
}

fn is_source(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| SOURCE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
}

fn is_test_path(rel_in_repo: &str) -> bool {
    let parts: Vec<&str> = rel_in_repo.split('/').collect();
    let (dirs, name) = parts.split_at(parts.len() - 1);
    let name = name[0];
    let stem = name.split('.').next().unwrap_or(name);
    dirs.iter().any(|d| *d == "tests" || *d == "test")
        || name.starts_with("test_")
        || stem.ends_with("_test")
        || stem.ends_with("_tests")
        || name.contains(".test.")
        || name.contains(".spec.")
}

fn walk_files(dir: &Path) -> impl Iterator<Item = walkdir::DirEntry> {
    WalkDir::new(dir)
        .min_depth(1)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            e.depth() == 0
                || !(is_hidden(e.file_name())
                    || (e.file_type().is_dir() && e.file_name().to_str().is_some_and(|n| SKIP_DIRS.contains(&n))))
        })
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
}

fn non_blank_lines(path: &Path) -> u64 {
    read_text(path)
        .map(|t| t.lines().filter(|l| !l.trim().is_empty()).count() as u64)
        .unwrap_or(0)
}

#[derive(Deserialize)]
struct TestReport {
    passed: u64,
    failed: u64,
}

#[derive(Deserialize)]
struct BuildStatus {
    #[serde(default)]
    repos: BTreeMap<String, bool>,
}

fn read_build_status(root: &Path) -> BTreeMap<String, bool> {
    read_text(&root.join(BUILD_STATUS_FILE))
        .and_then(|t| serde_json::from_str::<BuildStatus>(&t).ok())
        .map(|b| b.repos)
        .unwrap_or_default()
}

fn summarize_repo(root: &Path, name: &str, installable: bool) -> RepoInfo {
    let dir = root.join(name);
    let mut loc = 0;
    let mut test_files = Vec::new();
    for entry in walk_files(&dir) {
        if !is_source(entry.path()) {
            continue;
        }
        loc += non_blank_lines(entry.path());
        if let Some(rel_in_repo) = relative(&dir, entry.path()) {
            if is_test_path(&rel_in_repo) {
                test_files.push(format!("{name}/{rel_in_repo}"));
            }
        }
    }
    test_files.sort();
    RepoInfo {
        name: name.to_string(),
        loc,
        test_files,
        has_readme: dir.join("README.md").is_file(),
        installable,
    }
}

/// Summarize with the default tracked public-file patterns.
pub fn summarize_workspace(root: &Path, step: u64) -> Result<WorkspaceSummary, WorkspaceError> {
    summarize_workspace_with(root, step, &TrackedPatterns::default_set())
}

pub fn summarize_workspace_with(
    root: &Path,
    step: u64,
    tracked: &TrackedPatterns,
) -> Result<WorkspaceSummary, WorkspaceError> {
    let unreadable = |source| WorkspaceError::Unreadable {
        path: root.display().to_string(),
        source,
    };
    let mut top: Vec<String> = fs::read_dir(root)
        .map_err(unreadable)?
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_ok_and(|t| t.is_dir()))
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .filter(|n| !n.starts_with('.') && !SKIP_DIRS.contains(&n.as_str()))
        .collect();
    top.sort();

    let build_status = read_build_status(root);
    let repos: Vec<RepoInfo> = top
        .iter()
        .filter(|name| MANIFESTS.iter().any(|m| root.join(name).join(m).is_file()))
        .map(|name| {
            let installable = build_status.get(name).copied().unwrap_or(false);
            summarize_repo(root, name, installable)
        })
        .collect();

    // Theory: root document first, then per-repo documents.
    let mut theory = TheorySurface::default();
    let theory_paths =
        std::iter::once(THEORY_FILE.to_string()).chain(repos.iter().map(|r| format!("{}/{THEORY_FILE}", r.name)));
    for rel in theory_paths {
        if let Some(text) = read_text(&root.join(&rel)) {
            theory.present = true;
            theory.word_count += words(&text);
            theory.revision_count += text.lines().filter(|l| l.starts_with("## ")).count() as u64;
            if theory.thesis.is_none() {
                theory.thesis = thesis_of(&text);
            }
            theory.documents.push(rel);
        }
    }

    let mut public = PublicSurface::default();
    let paper_dir = root.join("paper");
    if paper_dir.is_dir() {
        for entry in walk_files(&paper_dir) {
            if entry.path().extension().and_then(|e| e.to_str()) == Some("tex") {
                if let Some(rel) = relative(root, entry.path()) {
                    public.paper_words += read_text(entry.path()).map(|t| words(&t)).unwrap_or(0);
                    public.paper_files.push(rel);
                }
            }
        }
    }
    let readmes = std::iter::once("README.md".to_string()).chain(repos.iter().map(|r| format!("{}/README.md", r.name)));
    for rel in readmes {
        if let Some(text) = read_text(&root.join(&rel)) {
            public.readme_words += words(&text);
            public.readme_files.push(rel);
        }
    }
    public.paper_files.sort();
    public.last_modified_step = read_text(&root.join(PUBLIC_MARKER)).and_then(|t| t.trim().parse().ok());

    let mut evidence = EvidenceSurface::default();
    for entry in walk_files(root) {
        let Some(rel) = relative(root, entry.path()) else {
            continue;
        };
        let parts: Vec<&str> = rel.split('/').collect();
        if parts[..parts.len() - 1].iter().any(|d| BENCH_DIRS.contains(d)) {
            evidence.benchmark_files.push(rel);
        }
    }
    evidence.benchmark_files.sort();

    let ledger_file = root.join(LEDGER_FILE);
    let opts = AuditOptions {
        tracked: tracked.clone(),
        ..AuditOptions::default()
    };
    let mut ledger = Ledger::default();
    if let Some(text) = read_text(&ledger_file) {
        evidence.ledger_path = Some(LEDGER_FILE.to_string());
        if let Ok(parsed) = Ledger::parse(&text, &ledger_file) {
            evidence.ledger_valid = true;
            evidence.claim_count = parsed.claims.len() as u64;
            ledger = parsed;
        }
    }
    // Read-only audit of a private copy; nothing is written back.
    let report = audit_claims(&mut ledger, root, &opts);
    evidence.public_literals = report.public_literals as u64;
    evidence.grounded_claim_ratio = if evidence.ledger_valid {
        report.coverage_ratio().clamp(0.0, 1.0)
    } else {
        0.0
    };
    evidence.test_pass_ratio = read_text(&root.join(TEST_REPORT_FILE))
        .and_then(|t| serde_json::from_str::<TestReport>(&t).ok())
        .map(|r| {
            let total = r.passed + r.failed;
            if total == 0 {
                0.0
            } else {
                r.passed as f64 / total as f64
            }
        })
        .unwrap_or(0.0);

    let utility_hypothesis = match read_text(&root.join(UTILITY_FILE)) {
        Some(text) => UtilityHypothesis {
            present: !text.trim().is_empty(),
            text: text.trim().to_string(),
        },
        None => UtilityHypothesis::default(),
    };

    let open_obligations = read_text(&root.join(OBLIGATIONS_FILE))
        .map(|t| {
            t.lines()
                .filter_map(|l| {
                    let l = l.trim_start();
                    l.strip_prefix("- ").or_else(|| l.strip_prefix("* "))
                })
                .map(|l| l.trim().to_string())
                .filter(|l| !l.is_empty())
                .collect()
        })
        .unwrap_or_default();

    Ok(WorkspaceSummary {
        theory,
        repo_forest: RepoSurface { repos },
        public_projection: public,
        evidence,
        utility_hypothesis,
        open_obligations,
        snapshot_step: step,
    })
}
