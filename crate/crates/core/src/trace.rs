//! Per-step trace records and the predicates checked over whole traces.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alphabet::{follow_up, Symbol, GROUNDING_PAIR};
use crate::canonical::{to_canonical_string, write_atomic};
use crate::executor::Outcome;
use crate::features::FeatureVector;
use crate::gate::AdjacencyVerdict;
use crate::kernel::{AdmissibleRule, Mode};
use crate::obligation::ObligationVector;
use crate::trigger::DiffReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepOutcome {
    Succeeded,
    Failed,
    TimedOut,
    GateRejected,
}

impl From<Outcome> for StepOutcome {
    fn from(o: Outcome) -> Self {
        match o {
            Outcome::Succeeded => StepOutcome::Succeeded,
            Outcome::Failed => StepOutcome::Failed,
            Outcome::TimedOut => StepOutcome::TimedOut,
        }
    }
}

/// Everything that happened in one transition. Contains no wall-clock data,
/// so identical runs produce identical records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub mode: Mode,
    pub budget_remaining: u64,
    pub pre_digest: String,
    pub features: FeatureVector,
    pub history: Vec<Symbol>,
    pub forced_queue_before: Vec<Symbol>,
    pub scores: BTreeMap<Symbol, f64>,
    pub admissible_rule: AdmissibleRule,
    pub admissible: Vec<Symbol>,
    pub selected: Symbol,
    pub prompt_digest: String,
    pub verdict: Option<AdjacencyVerdict>,
    pub outcome: StepOutcome,
    pub reason: Option<String>,
    pub transcript: Option<String>,
    pub fabrication: bool,
    pub diff: DiffReport,
    pub injections: Vec<Symbol>,
    pub suppressed_injections: Vec<Symbol>,
    pub dropped_forced: Vec<Symbol>,
    pub forced_queue: Vec<Symbol>,
    pub obligations: ObligationVector,
    pub pressure: f64,
    pub post_digest: String,
    pub mode_after: Mode,
}

impl TraceRecord {
    pub fn executed(&self) -> bool {
        self.outcome != StepOutcome::GateRejected
    }

    /// The symbol ran and its run counts as an expansion.
    pub fn executed_expansive(&self) -> bool {
        self.executed() && self.selected.is_expansive()
    }
}

pub fn symbols(trace: &[TraceRecord]) -> Vec<Symbol> {
    trace.iter().map(|r| r.selected).collect()
}

pub fn save_trace(trace: &[TraceRecord], path: &Path) -> std::io::Result<()> {
    let text = to_canonical_string(trace).map_err(std::io::Error::other)?;
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("cannot read trace {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed trace {path}: {detail}")]
    Parse { path: String, detail: String },
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| TraceError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// A step whose change to a public file was not followed by the grounding
/// pair on the next two steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropagationViolation {
    pub step: u64,
    pub found: Vec<Symbol>,
}

fn followed_by_pair(trace: &[TraceRecord], i: usize) -> Option<bool> {
    let next = trace.get(i + 1..i + 3)?;
    Some(next.iter().map(|r| r.selected).eq(GROUNDING_PAIR))
}

/// One-step propagation: a public change by a non-grounding prompt is
/// followed by GroundingCreation then SkepticalAudit. Steps whose successors
/// are tail-override steps, and steps near the end of a truncated trace,
/// are not judged.
pub fn propagation_violations(trace: &[TraceRecord]) -> Vec<PropagationViolation> {
    let mut out = Vec::new();
    for (i, r) in trace.iter().enumerate() {
        if !(r.executed() && r.diff.public_change && !r.selected.is_grounding_pass()) {
            continue;
        }
        let Some(next) = trace.get(i + 1..i + 3) else { continue };
        if next.iter().any(|n| n.admissible_rule == AdmissibleRule::Tail) {
            continue;
        }
        if followed_by_pair(trace, i) == Some(false) {
            out.push(PropagationViolation {
                step: r.step,
                found: next.iter().map(|n| n.selected).collect(),
            });
        }
    }
    out
}

/// Every executed expansive prompt is followed by its static follow-ups.
pub fn follow_up_violations(trace: &[TraceRecord]) -> Vec<PropagationViolation> {
    let mut out = Vec::new();
    for (i, r) in trace.iter().enumerate() {
        if !r.executed_expansive() {
            continue;
        }
        let want = follow_up(r.selected);
        let Some(next) = trace.get(i + 1..i + 1 + want.len()) else {
            continue;
        };
        if !next.iter().map(|n| n.selected).eq(want.iter().copied()) {
            out.push(PropagationViolation {
                step: r.step,
                found: next.iter().map(|n| n.selected).collect(),
            });
        }
    }
    out
}

/// The last `tail.len()` executed symbols equal `tail`.
pub fn ends_with_tail(trace: &[TraceRecord], tail: &[Symbol]) -> bool {
    trace.len() >= tail.len()
        && trace[trace.len() - tail.len()..]
            .iter()
            .map(|r| r.selected)
            .eq(tail.iter().copied())
}

/// No expansive prompt ran with a failing verdict.
pub fn gate_is_fail_closed(trace: &[TraceRecord]) -> bool {
    trace.iter().all(|r| match &r.verdict {
        Some(v) if !v.pass => !r.executed(),
        _ => true,
    })
}

pub fn max_pressure(trace: &[TraceRecord]) -> f64 {
    trace.iter().map(|r| r.pressure).fold(0.0, f64::max)
}

/// For each fabrication marker, the steps until the next grounding prompt
/// (GroundingCreation or FinalGroundingAudit) runs; the remaining trace
/// length when none does. Zero when the trace has no marker.
pub fn persistence_depth(trace: &[TraceRecord]) -> u64 {
    let mut depth = 0;
    let mut any = false;
    for (i, r) in trace.iter().enumerate() {
        if !r.fabrication {
            continue;
        }
        any = true;
        let d = trace[i + 1..]
            .iter()
            .position(|n| n.executed() && matches!(n.selected, Symbol::GroundingCreation | Symbol::FinalGroundingAudit))
            .map(|k| k as u64 + 1)
            .unwrap_or((trace.len() - i - 1) as u64);
        depth = depth.max(d);
    }
    if !any {
        tracing::warn!("persistence depth asked of a trace with no fabrication marker");
    }
    depth
}
