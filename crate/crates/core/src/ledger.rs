//! Grounding ledger: every public number maps to a claim record with a
//! command that reproduces it.
//!
//! The ledger lives in `grounding.json` at the workspace root, stored in
//! canonical form (sorted keys) so its git history diffs cleanly. The audit
//! re-derives each claim's status from disk and, optionally, by re-running
//! the claim's command.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::canonical::{sha256_hex, to_canonical_string, write_atomic};
use crate::process::{run_captured, shell, ProcessOutcome};
use crate::trigger::TrackedPatterns;

pub const LEDGER_FILE: &str = "grounding.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClaimStatus {
    Grounded,
    Ungrounded,
    Stale,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpan {
    pub file: String,
    /// 1-based, inclusive.
    pub start_line: usize,
    /// 1-based, inclusive.
    pub end_line: usize,
}

impl SourceSpan {
    pub fn contains(&self, file: &str, line: usize) -> bool {
        self.file == file && (self.start_line..=self.end_line).contains(&line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimRecord {
    pub id: String,
    pub text: String,
    pub source: SourceSpan,
    /// Digest of the source span when the claim was last checked.
    #[serde(default)]
    pub source_hash: Option<String>,
    #[serde(default)]
    pub command: Option<String>,
    /// SHA-256 (hex) of the command's standard output.
    #[serde(default)]
    pub expected_digest: Option<String>,
    pub status: ClaimStatus,
    #[serde(default)]
    pub last_checked_step: Option<u64>,
}

impl ClaimRecord {
    fn reproducible(&self) -> bool {
        self.command.as_deref().is_some_and(|c| !c.trim().is_empty())
            && self.expected_digest.as_deref().is_some_and(|d| !d.trim().is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ledger {
    #[serde(default = "default_version")]
    pub version: u32,
    pub claims: Vec<ClaimRecord>,
}

fn default_version() -> u32 {
    1
}

impl Default for Ledger {
    fn default() -> Self {
        Ledger {
            version: 1,
            claims: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: invalid ledger at `{field}`: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("ledger schema violation: {0}")]
    Schema(String),
}

impl Ledger {
    pub fn parse(text: &str, path: &Path) -> Result<Ledger, LedgerError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let ledger: Ledger = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            LedgerError::Parse {
                path: path.to_path_buf(),
                line: inner.line(),
                column: inner.column(),
                field,
                message: inner.to_string(),
            }
        })?;
        ledger.validate()?;
        Ok(ledger)
    }

    /// Unique ids, sane spans, and no grounded claim without a command and
    /// an output digest.
    pub fn validate(&self) -> Result<(), LedgerError> {
        let mut seen = BTreeSet::new();
        for c in &self.claims {
            if !seen.insert(c.id.as_str()) {
                return Err(LedgerError::Schema(format!("duplicate claim id `{}`", c.id)));
            }
            if c.source.start_line == 0 || c.source.end_line < c.source.start_line {
                return Err(LedgerError::Schema(format!(
                    "claim `{}` has an empty source span",
                    c.id
                )));
            }
            if c.status == ClaimStatus::Grounded && !c.reproducible() {
                return Err(LedgerError::Schema(format!(
                    "claim `{}` is grounded but lacks a command or output digest",
                    c.id
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&ClaimRecord> {
        self.claims.iter().find(|c| c.id == id)
    }

    pub fn to_canonical(&self) -> String {
        to_canonical_string(self).expect("ledger serializes")
    }
}

pub fn load_ledger(path: &Path) -> Result<Ledger, LedgerError> {
    let text = fs::read_to_string(path).map_err(|source| LedgerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ledger::parse(&text, path)
}

/// Load `grounding.json` under `root`, or an empty ledger when absent.
pub fn load_workspace_ledger(root: &Path) -> Result<Ledger, LedgerError> {
    let path = root.join(LEDGER_FILE);
    if path.exists() {
        load_ledger(&path)
    } else {
        Ok(Ledger::default())
    }
}

pub fn save_ledger(ledger: &Ledger, path: &Path) -> Result<(), LedgerError> {
    ledger.validate()?;
    write_atomic(path, ledger.to_canonical().as_bytes()).map_err(|source| LedgerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Digest of the exact lines a span covers, or `None` if the span no longer
/// exists on disk.
pub fn span_digest(root: &Path, span: &SourceSpan) -> Option<String> {
    let text = fs::read_to_string(root.join(&span.file)).ok()?;
    let lines: Vec<&str> = text.lines().collect();
    if span.start_line == 0 || span.end_line > lines.len() || span.end_line < span.start_line {
        return None;
    }
    Some(sha256_hex(
        lines[span.start_line - 1..span.end_line].join("\n").as_bytes(),
    ))
}

/// A decimal or percentage literal found in a tracked public file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NumericLiteral {
    pub file: String,
    /// 1-based.
    pub line: usize,
    pub text: String,
}

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b\d+(?:\.\d+)?\\?%|\b\d+\.\d+\b").expect("valid regex"));
static INLINE_CODE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"`[^`]*`").expect("valid regex"));
static TEX_VERBATIM_BEGIN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\\begin\{(verbatim|lstlisting|minted)\}").expect("valid regex"));
static TEX_VERBATIM_END: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\\end\{(verbatim|lstlisting|minted)\}").expect("valid regex"));

fn strip_tex_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, b) in bytes.iter().enumerate() {
        if *b == b'%' && (i == 0 || bytes[i - 1] != b'\\') {
            return &line[..i];
        }
    }
    line
}

/// Numeric literals in one document, skipping code fences (Markdown),
/// inline code spans, verbatim environments and comments (LaTeX).
pub fn scan_text(file: &str, text: &str) -> Vec<NumericLiteral> {
    let is_tex = file.ends_with(".tex");
    let mut in_block = false;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let trimmed = raw.trim_start();
        if is_tex {
            if in_block {
                if TEX_VERBATIM_END.is_match(raw) {
                    in_block = false;
                }
                continue;
            }
            if TEX_VERBATIM_BEGIN.is_match(raw) {
                in_block = !TEX_VERBATIM_END.is_match(raw);
                continue;
            }
        } else if trimmed.starts_with("```") || trimmed.starts_with("~~~") {
            in_block = !in_block;
            continue;
        } else if in_block {
            continue;
        }
        let line = if is_tex {
            strip_tex_comment(raw).to_string()
        } else {
            INLINE_CODE.replace_all(raw, " ").into_owned()
        };
        out.extend(NUMBER.find_iter(&line).map(|m| NumericLiteral {
            file: file.to_string(),
            line: i + 1,
            text: m.as_str().to_string(),
        }));
    }
    out
}

pub fn scan_numeric_literals(root: &Path, tracked: &TrackedPatterns) -> Vec<NumericLiteral> {
    tracked
        .matching_files(root)
        .into_iter()
        .flat_map(|rel| {
            let text = fs::read(root.join(&rel))
                .map(|b| String::from_utf8_lossy(&b).into_owned())
                .unwrap_or_default();
            scan_text(&rel, &text)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Stale,
    Failed,
    Ungrounded,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub claim_id: Option<String>,
    pub file: String,
    pub line: Option<usize>,
    pub literal: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub grounded: usize,
    pub ungrounded: usize,
    pub stale: usize,
    pub failed: usize,
}

impl StatusCounts {
    pub fn total(&self) -> usize {
        self.grounded + self.ungrounded + self.stale + self.failed
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub total_claims: usize,
    /// Per-status counts; orphan public numbers count as ungrounded.
    pub counts: StatusCounts,
    pub orphan_numbers: usize,
    pub public_literals: usize,
    /// Public literals covered by a claim whose audited status is grounded.
    pub grounded_literals: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn has_violations(&self) -> bool {
        !self.violations.is_empty()
    }

    /// Grounded-claim ratio per tracked numeric literal. With no public
    /// literals, falls back to the grounded fraction of the ledger's claims.
    pub fn coverage_ratio(&self) -> f64 {
        if self.public_literals > 0 {
            self.grounded_literals as f64 / self.public_literals as f64
        } else if self.total_claims > 0 {
            let grounded_claims = self.counts.grounded;
            grounded_claims as f64 / self.total_claims as f64
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct AuditOptions {
    pub run_commands: bool,
    pub timeout: Duration,
    /// Controller step recorded as `last_checked_step` on re-verified claims.
    pub step: Option<u64>,
    pub tracked: TrackedPatterns,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            run_commands: false,
            timeout: Duration::from_secs(60),
            step: None,
            tracked: TrackedPatterns::default_set(),
        }
    }
}

fn run_claim_command(root: &Path, command: &str, timeout: Duration) -> Result<String, String> {
    let mut cmd = shell(command);
    cmd.current_dir(root);
    match run_captured(cmd, None, timeout) {
        ProcessOutcome::Exited { status, stdout, .. } if status.success() => Ok(sha256_hex(&stdout)),
        ProcessOutcome::Exited { status, .. } => Err(format!("command exited with {status}")),
        ProcessOutcome::TimedOut { .. } => Err("timeout".to_string()),
        ProcessOutcome::SpawnFailed(e) => Err(format!("spawn failed: {e}")),
    }
}

/// Re-derive every claim's status, update the ledger in place, and report
/// violations including public numbers no claim covers.
pub fn audit_claims(ledger: &mut Ledger, root: &Path, opts: &AuditOptions) -> AuditReport {
    let mut report = AuditReport {
        total_claims: ledger.claims.len(),
        ..AuditReport::default()
    };

    for claim in &mut ledger.claims {
        let current = span_digest(root, &claim.source);
        let stale = match (&current, &claim.source_hash) {
            (None, _) => true,
            (Some(now), Some(then)) => now != then,
            (Some(_), None) => false,
        };
        let mut reason = String::new();
        let status = if stale {
            reason = if current.is_none() {
                "source span no longer exists".into()
            } else {
                "source text changed since last check".into()
            };
            ClaimStatus::Stale
        } else if !claim.reproducible() {
            reason = "no reproducing command or output digest".into();
            ClaimStatus::Ungrounded
        } else if opts.run_commands {
            let command = claim.command.as_deref().unwrap_or_default();
            match run_claim_command(root, command, opts.timeout) {
                Ok(digest) if Some(digest.as_str()) == claim.expected_digest.as_deref() => {
                    claim.last_checked_step = opts.step.or(claim.last_checked_step);
                    ClaimStatus::Grounded
                }
                Ok(_) => {
                    reason = "output digest mismatch".into();
                    ClaimStatus::Failed
                }
                Err(e) => {
                    reason = e;
                    ClaimStatus::Failed
                }
            }
        } else if claim.status == ClaimStatus::Failed {
            reason = "last command run failed".into();
            ClaimStatus::Failed
        } else {
            ClaimStatus::Grounded
        };
        if status == ClaimStatus::Grounded && claim.source_hash.is_none() {
            claim.source_hash = current;
        }
        claim.status = status;
        match status {
            ClaimStatus::Grounded => report.counts.grounded += 1,
            ClaimStatus::Ungrounded => report.counts.ungrounded += 1,
            ClaimStatus::Stale => report.counts.stale += 1,
            ClaimStatus::Failed => report.counts.failed += 1,
        }
        let kind = match status {
            ClaimStatus::Grounded => None,
            ClaimStatus::Ungrounded => Some(ViolationKind::Ungrounded),
            ClaimStatus::Stale => Some(ViolationKind::Stale),
            ClaimStatus::Failed => Some(ViolationKind::Failed),
        };
        if let Some(kind) = kind {
            report.violations.push(Violation {
                kind,
                claim_id: Some(claim.id.clone()),
                file: claim.source.file.clone(),
                line: Some(claim.source.start_line),
                literal: None,
                reason,
            });
        }
    }

    let literals = scan_numeric_literals(root, &opts.tracked);
    report.public_literals = literals.len();
    for lit in literals {
        let mut covering = ledger
            .claims
            .iter()
            .filter(|c| c.source.contains(&lit.file, lit.line))
            .peekable();
        if covering.peek().is_none() {
            report.orphan_numbers += 1;
            report.counts.ungrounded += 1;
            report.violations.push(Violation {
                kind: ViolationKind::Ungrounded,
                claim_id: None,
                file: lit.file,
                line: Some(lit.line),
                literal: Some(lit.text),
                reason: "public number without a claim record".into(),
            });
        } else if covering.any(|c| c.status == ClaimStatus::Grounded) {
            report.grounded_literals += 1;
        }
    }
    report.violations.sort();
    report
}
