//! Adjacency gate for expansive prompts.
//!
//! Before an expansive prompt runs, the agent's declared pivot
//! (`expansion.json`) must pass five rules. Three are mechanical checks
//! against the workspace; "single conceptual step" and "concrete instance"
//! are semantic and go to a [`Judge`]. Any judge failure fails the gate.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Component, Path};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::ledger::load_workspace_ledger;
use crate::process::{run_captured, ProcessOutcome};
use crate::workspace::WorkspaceSummary;

pub const PROPOSAL_FILE: &str = "expansion.json";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreservedCapability {
    pub name: String,
    /// Path (relative to the root) of a test or benchmark exercising it.
    pub test: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionProposal {
    pub proposal: String,
    pub preserved_capability: PreservedCapability,
    pub concrete_instance: String,
    /// Path of the benchmark, test or ledger file the pivot strengthens.
    pub evidence_artifact: String,
    /// Ledger claim id or benchmark path backing the new claim.
    pub claim_support: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleRationale {
    pub preserves_capability: String,
    pub single_step: String,
    pub concrete_instance: String,
    pub strengthens_evidence: String,
    pub claim_backed: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyVerdict {
    pub preserves_capability: bool,
    pub single_step: bool,
    pub concrete_instance: bool,
    pub strengthens_evidence: bool,
    pub claim_backed: bool,
    pub pass: bool,
    pub rationale: RuleRationale,
}

impl AdjacencyVerdict {
    /// Verdict for a step whose proposal could not be read at all.
    pub fn rejected(reason: &str) -> Self {
        AdjacencyVerdict {
            preserves_capability: false,
            single_step: false,
            concrete_instance: false,
            strengthens_evidence: false,
            claim_backed: false,
            pass: false,
            rationale: RuleRationale {
                preserves_capability: reason.to_string(),
                single_step: reason.to_string(),
                concrete_instance: reason.to_string(),
                strengthens_evidence: reason.to_string(),
                claim_backed: reason.to_string(),
            },
        }
    }
}

/// What the judge sees: the proposal plus a compact digest of the workspace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub proposal: ExpansionProposal,
    pub repo_names: Vec<String>,
    pub thesis: Option<String>,
    pub utility_hypothesis: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeResponse {
    pub single_step: bool,
    pub single_step_rationale: String,
    pub concrete_instance: bool,
    pub concrete_instance_rationale: String,
}

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("judge timed out")]
    Timeout,
    #[error("judge failed: {0}")]
    Failed(String),
}

pub trait Judge {
    fn judge(&self, request: &JudgeRequest) -> Result<JudgeResponse, JudgeError>;
}

/// Offline default: keyword overlap with the workspace vocabulary for the
/// single-step rule, a minimum word count for the concrete-instance rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicJudge {
    pub min_overlap: usize,
    pub min_instance_words: usize,
}

impl Default for HeuristicJudge {
    fn default() -> Self {
        HeuristicJudge {
            min_overlap: 1,
            min_instance_words: 5,
        }
    }
}

const STOPWORDS: [&str; 12] = [
    "with", "that", "this", "from", "into", "their", "which", "have", "will", "also", "more", "than",
];

fn keywords(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|w| w.chars().count() >= 4 && !STOPWORDS.contains(&w.as_str()))
        .collect()
}

impl Judge for HeuristicJudge {
    fn judge(&self, req: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        let mut vocab = keywords(&req.proposal.preserved_capability.name);
        for r in &req.repo_names {
            vocab.extend(keywords(r));
        }
        if let Some(t) = &req.thesis {
            vocab.extend(keywords(t));
        }
        vocab.extend(keywords(&req.utility_hypothesis));
        let shared: Vec<String> = keywords(&req.proposal.proposal).intersection(&vocab).cloned().collect();
        let single_step = !req.proposal.proposal.trim().is_empty() && shared.len() >= self.min_overlap;
        let instance_words = req.proposal.concrete_instance.split_whitespace().count();
        let concrete_instance = instance_words >= self.min_instance_words;
        Ok(JudgeResponse {
            single_step,
            single_step_rationale: format!(
                "{} shared keyword(s) with the workspace ({}), need {}",
                shared.len(),
                shared.join(", "),
                self.min_overlap
            ),
            concrete_instance,
            concrete_instance_rationale: format!(
                "instance description has {instance_words} word(s), need {}",
                self.min_instance_words
            ),
        })
    }
}

/// External judge: the request is written as JSON on stdin, the response read
/// as JSON from stdout.
#[derive(Debug, Clone)]
pub struct CommandJudge {
    pub command: String,
    pub timeout: Duration,
}

impl Judge for CommandJudge {
    fn judge(&self, req: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
        let input = serde_json::to_vec(req).map_err(|e| JudgeError::Failed(e.to_string()))?;
        match run_captured(crate::process::shell(&self.command), Some(input), self.timeout) {
            ProcessOutcome::Exited { status, stdout, .. } if status.success() => {
                serde_json::from_slice(&stdout).map_err(|e| JudgeError::Failed(format!("bad response: {e}")))
            }
            ProcessOutcome::Exited { status, stderr, .. } => Err(JudgeError::Failed(format!(
                "exited with {status}: {}",
                String::from_utf8_lossy(&stderr).trim()
            ))),
            ProcessOutcome::TimedOut { .. } => Err(JudgeError::Timeout),
            ProcessOutcome::SpawnFailed(e) => Err(JudgeError::Failed(e)),
        }
    }
}

impl CommandJudge {
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        CommandJudge {
            command: command.into(),
            timeout,
        }
    }
}

/// Relative path that stays inside the root.
fn contained(rel: &str) -> bool {
    let p = Path::new(rel);
    !rel.trim().is_empty()
        && p.components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

pub fn check_adjacency(
    proposal: &ExpansionProposal,
    w: &WorkspaceSummary,
    root: &Path,
    judge: &dyn Judge,
) -> AdjacencyVerdict {
    let cap = &proposal.preserved_capability;
    let preserves_capability = !cap.name.trim().is_empty() && w.has_test_or_bench(cap.test.trim());
    let preserves_rationale = if preserves_capability {
        format!("capability `{}` is exercised by {}", cap.name, cap.test)
    } else if cap.name.trim().is_empty() {
        "no preserved capability named".to_string()
    } else {
        format!("`{}` is not a test or benchmark in the workspace", cap.test)
    };

    let evidence = proposal.evidence_artifact.trim();
    let strengthens_evidence = contained(evidence) && root.join(evidence).exists();
    let evidence_rationale = if strengthens_evidence {
        format!("evidence artifact {evidence} exists")
    } else if evidence.is_empty() {
        "no evidence artifact declared".to_string()
    } else {
        format!("evidence artifact {evidence} does not exist")
    };

    let support = proposal.claim_support.trim();
    let in_ledger = !support.is_empty()
        && load_workspace_ledger(root)
            .map(|l| l.get(support).is_some())
            .unwrap_or(false);
    let in_bench = w.evidence.benchmark_files.iter().any(|b| b == support);
    let claim_backed = in_ledger || in_bench;
    let claim_rationale = if in_ledger {
        format!("claim `{support}` resolves in the grounding ledger")
    } else if in_bench {
        format!("benchmark {support} exists")
    } else if support.is_empty() {
        "no claim support declared".to_string()
    } else {
        format!("`{support}` is neither a ledger claim nor a benchmark")
    };

    let request = JudgeRequest {
        proposal: proposal.clone(),
        repo_names: w.repo_forest.repos.iter().map(|r| r.name.clone()).collect(),
        thesis: w.theory.thesis.clone(),
        utility_hypothesis: w.utility_hypothesis.text.clone(),
    };
    let response = judge.judge(&request).unwrap_or_else(|e| {
        tracing::warn!("adjacency judge unavailable: {e}");
        JudgeResponse {
            single_step: false,
            single_step_rationale: "judge unavailable".to_string(),
            concrete_instance: false,
            concrete_instance_rationale: "judge unavailable".to_string(),
        }
    });

    let pass = preserves_capability
        && response.single_step
        && response.concrete_instance
        && strengthens_evidence
        && claim_backed;
    AdjacencyVerdict {
        preserves_capability,
        single_step: response.single_step,
        concrete_instance: response.concrete_instance,
        strengthens_evidence,
        claim_backed,
        pass,
        rationale: RuleRationale {
            preserves_capability: preserves_rationale,
            single_step: response.single_step_rationale,
            concrete_instance: response.concrete_instance_rationale,
            strengthens_evidence: evidence_rationale,
            claim_backed: claim_rationale,
        },
    }
}

/// Read `expansion.json` from the root. Missing or malformed files yield an
/// error message that becomes the rejection rationale.
pub fn read_proposal(root: &Path) -> Result<ExpansionProposal, String> {
    let path = root.join(PROPOSAL_FILE);
    let text = fs::read_to_string(&path).map_err(|_| format!("no {PROPOSAL_FILE} declared"))?;
    serde_json::from_str(&text).map_err(|e| format!("invalid {PROPOSAL_FILE}: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canonical::sha256_hex;
    use crate::ledger::{save_ledger, ClaimRecord, ClaimStatus, Ledger, SourceSpan, LEDGER_FILE};
    use crate::workspace::summarize_workspace;
    use tempfile::tempdir;

    fn write(root: &Path, rel: &str, text: &str) {
        let p = root.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, text).unwrap();
    }

    fn fixture() -> tempfile::TempDir {
        let dir = tempdir().unwrap();
        let root = dir.path();
        write(root, "flows/pyproject.toml", "[project]\n");
        write(root, "flows/src/flows.py", "def solve():\n    return 1\n");
        write(
            root,
            "flows/tests/test_solve.py",
            "def test_solve():\n    assert True\n",
        );
        write(root, "flows/bench/bench_solve.py", "print(1)\n");
        write(root, "README.md", "speed 1.5\n");
        let ledger = Ledger {
            version: 1,
            claims: vec![ClaimRecord {
                id: "claim-1".into(),
                text: "speed".into(),
                source: SourceSpan {
                    file: "README.md".into(),
                    start_line: 1,
                    end_line: 1,
                },
                source_hash: None,
                command: Some("printf 1.5".into()),
                expected_digest: Some(sha256_hex(b"1.5")),
                status: ClaimStatus::Grounded,
                last_checked_step: None,
            }],
        };
        save_ledger(&ledger, &root.join(LEDGER_FILE)).unwrap();
        dir
    }

    fn good_proposal() -> ExpansionProposal {
        ExpansionProposal {
            proposal: "extend the flows solver to weighted graphs".into(),
            preserved_capability: PreservedCapability {
                name: "flows solver".into(),
                test: "flows/tests/test_solve.py".into(),
            },
            concrete_instance: "max flow on a weighted road network".into(),
            evidence_artifact: "flows/bench/bench_solve.py".into(),
            claim_support: "claim-1".into(),
        }
    }

    struct Failing;
    impl Judge for Failing {
        fn judge(&self, _: &JudgeRequest) -> Result<JudgeResponse, JudgeError> {
            Err(JudgeError::Timeout)
        }
    }

    #[test]
    fn satisfied_proposal_passes() {
        let dir = fixture();
        let w = summarize_workspace(dir.path(), 0).unwrap();
        let v = check_adjacency(&good_proposal(), &w, dir.path(), &HeuristicJudge::default());
        assert!(v.pass, "{v:?}");
    }

    #[test]
    fn benchmark_path_backs_a_claim() {
        let dir = fixture();
        let w = summarize_workspace(dir.path(), 0).unwrap();
        let p = ExpansionProposal {
            claim_support: "flows/bench/bench_solve.py".into(),
            ..good_proposal()
        };
        assert!(check_adjacency(&p, &w, dir.path(), &HeuristicJudge::default()).claim_backed);
    }

    #[test]
    fn empty_claim_support_fails_rule_five() {
        let dir = fixture();
        let w = summarize_workspace(dir.path(), 0).unwrap();
        let p = ExpansionProposal {
            claim_support: String::new(),
            ..good_proposal()
        };
        let v = check_adjacency(&p, &w, dir.path(), &HeuristicJudge::default());
        assert!(!v.claim_backed);
        assert!(!v.pass);
    }

    #[test]
    fn missing_evidence_path_fails_rule_four() {
        let dir = fixture();
        let w = summarize_workspace(dir.path(), 0).unwrap();
        let p = ExpansionProposal {
            evidence_artifact: "flows/bench/missing.py".into(),
            ..good_proposal()
        };
        let v = check_adjacency(&p, &w, dir.path(), &HeuristicJudge::default());
        assert!(!v.strengthens_evidence);
        assert!(!v.pass);
        let p = ExpansionProposal {
            evidence_artifact: "../outside".into(),
            ..good_proposal()
        };
        assert!(!check_adjacency(&p, &w, dir.path(), &HeuristicJudge::default()).strengthens_evidence);
    }

    #[test]
    fn judge_failure_fails_closed_but_mechanical_rules_stand() {
        let dir = fixture();
        let w = summarize_workspace(dir.path(), 0).unwrap();
        let v = check_adjacency(&good_proposal(), &w, dir.path(), &Failing);
        assert!(!v.pass);
        assert_eq!(v.rationale.single_step, "judge unavailable");
        let h = check_adjacency(&good_proposal(), &w, dir.path(), &HeuristicJudge::default());
        assert_eq!(
            (v.preserves_capability, v.strengthens_evidence, v.claim_backed),
            (h.preserves_capability, h.strengthens_evidence, h.claim_backed)
        );
    }

    #[test]
    fn unrelated_leap_fails_single_step() {
        let dir = fixture();
        let w = summarize_workspace(dir.path(), 0).unwrap();
        let p = ExpansionProposal {
            proposal: "build a chatbot for recipes".into(),
            ..good_proposal()
        };
        assert!(!check_adjacency(&p, &w, dir.path(), &HeuristicJudge::default()).single_step);
    }

    #[test]
    fn command_judge_round_trip_and_timeout() {
        let dir = fixture();
        let w = summarize_workspace(dir.path(), 0).unwrap();
        let ok = CommandJudge::new(
            r#"cat >/dev/null; echo '{"single_step":true,"single_step_rationale":"ok","concrete_instance":true,"concrete_instance_rationale":"ok"}'"#,
            Duration::from_secs(5),
        );
        assert!(check_adjacency(&good_proposal(), &w, dir.path(), &ok).pass);
        let slow = CommandJudge::new("sleep 5", Duration::from_millis(100));
        let v = check_adjacency(&good_proposal(), &w, dir.path(), &slow);
        assert!(!v.pass);
    }

    #[test]
    fn proposal_file_errors() {
        let dir = tempdir().unwrap();
        assert!(read_proposal(dir.path()).unwrap_err().contains("no expansion.json"));
        write(dir.path(), PROPOSAL_FILE, r#"{"proposal": "x"}"#);
        assert!(read_proposal(dir.path()).unwrap_err().contains("invalid"));
    }
}
