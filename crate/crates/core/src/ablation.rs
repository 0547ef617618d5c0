//! Simulated ablations: the same scripted scenario is run twice, once with a
//! controller component switched off and once with everything on, and the
//! metrics each ablation is expected to degrade are compared.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::canonical::to_canonical_string;
use crate::config::{ConfigError, ExecutorKind, RunConfig, Settings, Switch};
use crate::kernel::Mode;
use crate::ledger::{audit_claims, AuditOptions, Ledger, LEDGER_FILE};
use crate::obligation::{pressure_bound, PushTable};
use crate::run::{run, RunError, RunOptions, PRESSURE_K};
use crate::trace::{max_pressure, persistence_depth, TraceRecord};
use crate::workspace::{summarize_workspace_with, WorkspaceError};

/// Scenario scripts shipped with the crate, by name.
pub const SCENARIOS: [(&str, &str); 3] = [
    ("golden", include_str!("../../../fixtures/scripts/golden.json")),
    (
        "fabrication",
        include_str!("../../../fixtures/scripts/fabrication.json"),
    ),
    ("long", include_str!("../../../fixtures/scripts/long.json")),
];

/// The scenario each switch is judged on when a spec does not name one.
pub fn designated_scenario(switch: Switch) -> &'static str {
    match switch {
        Switch::Trigger => "fabrication",
        Switch::Decay => "long",
        Switch::Adjacency | Switch::Ledger | Switch::PaperFirst | Switch::BenchmarkJudge => "golden",
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error("unknown scenario `{0}` (built-in: golden, fabrication, long; or a path to a script)")]
    UnknownScenario(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed ablation spec {path}: {detail}")]
    Spec { path: String, detail: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
}

fn default_repetitions() -> u32 {
    1
}

/// One switch off against the all-on control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub switch: Switch,
    /// Built-in scenario name or a script path; the designated scenario when absent.
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    /// Overrides the script length as the step budget.
    #[serde(default)]
    pub budget: Option<u64>,
}

impl AblationSpec {
    pub fn new(switch: Switch) -> Self {
        AblationSpec {
            switch,
            scenario: None,
            repetitions: 1,
            budget: None,
        }
    }

    pub fn scenario_name(&self) -> &str {
        self.scenario.as_deref().unwrap_or(designated_scenario(self.switch))
    }
}

/// What `cesm ablate` reads: a list of specs, plus an optional factorial arm
/// with every listed switch off at once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationPlan {
    pub ablations: Vec<AblationSpec>,
    #[serde(default)]
    pub factorial: bool,
}

impl AblationPlan {
    /// All six switches on their designated scenarios.
    pub fn all() -> Self {
        AblationPlan {
            ablations: Switch::ALL.iter().map(|s| AblationSpec::new(*s)).collect(),
            factorial: false,
        }
    }

    /// Accepts a plan object, a bare list of specs, or a single spec.
    pub fn parse(text: &str, origin: &str) -> Result<Self, AblationError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Doc {
            Plan(AblationPlan),
            List(Vec<AblationSpec>),
            One(AblationSpec),
        }
        let doc: Doc = serde_json::from_str(text).map_err(|e| AblationError::Spec {
            path: origin.to_string(),
            detail: e.to_string(),
        })?;
        let plan = match doc {
            Doc::Plan(p) => p,
            Doc::List(ablations) => AblationPlan {
                ablations,
                factorial: false,
            },
            Doc::One(s) => AblationPlan {
                ablations: vec![s],
                factorial: false,
            },
        };
        if plan.ablations.iter().any(|s| s.repetitions == 0) {
            return Err(AblationError::Spec {
                path: origin.to_string(),
                detail: "repetitions must be >= 1".into(),
            });
        }
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, AblationError> {
        let text = fs::read_to_string(path).map_err(|source| AblationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// Metrics each ablation is predicted to move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    /// Executed expansive prompts in Harden.
    pub pivots: u64,
    /// Numeric literals in public files not covered by a grounded claim, at the end.
    pub unsupported_claims: u64,
    /// First step at which the paper has content and the ledger grounds
    /// something; trace length + 1 when that never happens.
    pub sync_step: u64,
    pub max_pressure: f64,
    pub persistence_depth: u64,
    /// Benchmark artifacts at the end.
    pub benchmarks: u64,
    pub steps: u64,
}

pub fn sync_step(trace: &[TraceRecord]) -> u64 {
    trace
        .iter()
        .position(|r| r.features.get("paper_deficit") < Some(1.0) && r.features.get("grounding_deficit") < Some(1.0))
        .map(|i| trace[i].step)
        .unwrap_or(trace.len() as u64 + 1)
}

pub fn measure(trace: &[TraceRecord], root: &Path, settings: &Settings) -> Result<SimMetrics, AblationError> {
    let w = summarize_workspace_with(root, trace.len() as u64, &settings.tracked)?;
    let mut ledger = fs::read_to_string(root.join(LEDGER_FILE))
        .ok()
        .and_then(|t| Ledger::parse(&t, &root.join(LEDGER_FILE)).ok())
        .unwrap_or_default();
    let opts = AuditOptions {
        tracked: settings.tracked.clone(),
        ..AuditOptions::default()
    };
    let report = audit_claims(&mut ledger, root, &opts);
    let depth = if trace.iter().any(|r| r.fabrication) {
        persistence_depth(trace)
    } else {
        0
    };
    Ok(SimMetrics {
        pivots: trace
            .iter()
            .filter(|r| r.mode == Mode::Harden && r.executed_expansive())
            .count() as u64,
        unsupported_claims: (report.public_literals - report.grounded_literals) as u64,
        sync_step: sync_step(trace),
        max_pressure: max_pressure(trace),
        persistence_depth: depth,
        benchmarks: w.evidence.benchmark_count(),
        steps: trace.len() as u64,
    })
}

/// Predicted direction, checked on (ablated, control).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub metric: String,
    pub prediction: String,
    pub holds: bool,
}

pub fn signature(switch: Switch, ablated: &SimMetrics, control: &SimMetrics, bound: f64) -> Signature {
    let (metric, prediction, holds) = match switch {
        Switch::Adjacency => ("pivots", "fewer pivots", ablated.pivots < control.pivots),
        Switch::Ledger => (
            "unsupported_claims",
            "larger unsupported claim surface",
            ablated.unsupported_claims > control.unsupported_claims,
        ),
        Switch::PaperFirst => (
            "sync_step",
            "later paper/evidence synchronization",
            ablated.sync_step > control.sync_step,
        ),
        Switch::Decay => (
            "max_pressure",
            "pressure exceeds the decay bound",
            ablated.max_pressure > bound && control.max_pressure <= bound + 1e-9,
        ),
        Switch::Trigger => (
            "persistence_depth",
            "fabrications persist across steps",
            ablated.persistence_depth >= 2 && control.persistence_depth <= 1,
        ),
        Switch::BenchmarkJudge => (
            "benchmarks",
            "weaker evaluation surface",
            ablated.benchmarks < control.benchmarks,
        ),
    };
    Signature {
        metric: metric.to_string(),
        prediction: prediction.to_string(),
        holds,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub switch: Switch,
    pub scenario: String,
    pub repetitions: u32,
    pub ablated: SimMetrics,
    pub control: SimMetrics,
    pub pressure_bound: f64,
    pub signature: Signature,
    /// Repetitions reproduced the first run's metrics exactly.
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorialResult {
    pub switches: Vec<Switch>,
    pub scenario: String,
    pub ablated: SimMetrics,
    pub control: SimMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecFailure {
    pub switch: Switch,
    pub scenario: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub results: Vec<AblationResult>,
    pub factorial: Vec<FactorialResult>,
    pub failures: Vec<SpecFailure>,
}

impl AblationReport {
    pub fn all_hold(&self) -> bool {
        self.failures.is_empty() && self.results.iter().all(|r| r.signature.holds && r.deterministic)
    }

    pub fn to_json(&self) -> String {
        to_canonical_string(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:<12} {:<18} {:>12} {:>12}  signature",
            "switch off", "scenario", "metric", "ablated", "control"
        );
        for r in &self.results {
            let (a, c) = metric_pair(&r.signature.metric, &r.ablated, &r.control);
            let _ = writeln!(
                out,
                "{:<16} {:<12} {:<18} {:>12} {:>12}  {} ({})",
                r.switch.name(),
                r.scenario,
                r.signature.metric,
                a,
                c,
                if r.signature.holds { "holds" } else { "VIOLATED" },
                r.signature.prediction
            );
        }
        for f in &self.failures {
            let _ = writeln!(out, "{:<16} {:<12} error: {}", f.switch.name(), f.scenario, f.error);
        }
        out
    }

    /// One row per arm, every metric, for plotting elsewhere.
    pub fn csv(&self) -> String {
        let mut out = String::from(
            "switch,scenario,arm,pivots,unsupported_claims,sync_step,max_pressure,persistence_depth,benchmarks,steps\n",
        );
        let mut row = |switch: &str, scenario: &str, arm: &str, m: &SimMetrics| {
            let _ = writeln!(
                out,
                "{switch},{scenario},{arm},{},{},{},{},{},{},{}",
                m.pivots, m.unsupported_claims, m.sync_step, m.max_pressure, m.persistence_depth, m.benchmarks, m.steps
            );
        };
        for r in &self.results {
            row(r.switch.name(), &r.scenario, "ablated", &r.ablated);
            row(r.switch.name(), &r.scenario, "control", &r.control);
        }
        for f in &self.factorial {
            let name: Vec<&str> = f.switches.iter().map(|s| s.name()).collect();
            let name = name.join("+");
            row(&name, &f.scenario, "ablated", &f.ablated);
            row(&name, &f.scenario, "control", &f.control);
        }
        out
    }
}

fn metric_pair(metric: &str, a: &SimMetrics, c: &SimMetrics) -> (String, String) {
    let pick = |m: &SimMetrics| match metric {
        "pivots" => m.pivots.to_string(),
        "unsupported_claims" => m.unsupported_claims.to_string(),
        "sync_step" => m.sync_step.to_string(),
        "max_pressure" => format!("{:.3}", m.max_pressure),
        "persistence_depth" => m.persistence_depth.to_string(),
        _ => m.benchmarks.to_string(),
    };
    (pick(a), pick(c))
}

/// Script text for a scenario name or path.
pub fn scenario_script(name: &str) -> Result<String, AblationError> {
    if let Some((_, text)) = SCENARIOS.iter().find(|(n, _)| *n == name) {
        return Ok(text.to_string());
    }
    let path = Path::new(name);
    if path.is_file() {
        return fs::read_to_string(path).map_err(|source| AblationError::Io {
            path: name.to_string(),
            source,
        });
    }
    Err(AblationError::UnknownScenario(name.to_string()))
}

/// Run one arm of a scenario in a fresh temporary workspace.
pub fn run_arm(
    baseline: &RunConfig,
    script: &str,
    budget: Option<u64>,
    off: &[Switch],
) -> Result<SimMetrics, AblationError> {
    let dir = tempfile::tempdir().map_err(|source| AblationError::Io {
        path: "temporary directory".into(),
        source,
    })?;
    let script_path: PathBuf = dir.path().join("script.json");
    fs::write(&script_path, script).map_err(|source| AblationError::Io {
        path: script_path.display().to_string(),
        source,
    })?;
    let length = serde_json::from_str::<serde_json::Value>(script)
        .ok()
        .and_then(|v| v.get("length").and_then(|l| l.as_u64()));

    let mut raw = baseline.clone();
    raw.run.workspace = dir.path().join("ws");
    raw.run.state_dir = Some(dir.path().join("state"));
    raw.run.budget = budget.or(length).unwrap_or(raw.run.budget);
    raw.executor.kind = ExecutorKind::Mock;
    raw.executor.script = Some(script_path);
    raw.git.commit = false;
    raw.ablation.off = off.to_vec();
    let settings = Settings::resolve(raw, dir.path())?;
    let out = run(
        &settings,
        RunOptions {
            persist: false,
            ..RunOptions::default()
        },
    )?;
    measure(&out.trace, &settings.workspace, &settings)
}

/// Ablated and control metrics for one spec, with the signature check.
pub fn run_ablation(spec: &AblationSpec, baseline: &RunConfig) -> Result<AblationResult, AblationError> {
    let script = scenario_script(spec.scenario_name())?;
    let mut first: Option<(SimMetrics, SimMetrics)> = None;
    let mut deterministic = true;
    for _ in 0..spec.repetitions.max(1) {
        let ablated = run_arm(baseline, &script, spec.budget, &[spec.switch])?;
        let control = run_arm(baseline, &script, spec.budget, &[])?;
        match &first {
            None => first = Some((ablated, control)),
            Some(f) => deterministic &= *f == (ablated, control),
        }
    }
    let (ablated, control) = first.expect("at least one repetition");
    let alpha_max = PushTable::default().alpha_max();
    let bound = pressure_bound(PRESSURE_K, alpha_max, baseline.obligations.lambda)
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let signature = signature(spec.switch, &ablated, &control, bound);
    Ok(AblationResult {
        switch: spec.switch,
        scenario: spec.scenario_name().to_string(),
        repetitions: spec.repetitions.max(1),
        ablated,
        control,
        pressure_bound: bound,
        signature,
        deterministic,
    })
}

/// Every spec in the plan; a failing spec is reported and the rest still run.
pub fn run_plan(plan: &AblationPlan, baseline: &RunConfig) -> AblationReport {
    let mut report = AblationReport::default();
    for spec in &plan.ablations {
        match run_ablation(spec, baseline) {
            Ok(r) => report.results.push(r),
            Err(e) => {
                tracing::error!("ablation `{}` failed: {e}", spec.switch.name());
                report.failures.push(SpecFailure {
                    switch: spec.switch,
                    scenario: spec.scenario_name().to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    if plan.factorial && !plan.ablations.is_empty() {
        let mut switches: Vec<Switch> = plan.ablations.iter().map(|s| s.switch).collect();
        switches.sort_by_key(|s| s.name());
        switches.dedup();
        let scenario = plan.ablations[0].scenario_name().to_string();
        let arms = scenario_script(&scenario).and_then(|script| {
            Ok((
                run_arm(baseline, &script, plan.ablations[0].budget, &switches)?,
                run_arm(baseline, &script, plan.ablations[0].budget, &[])?,
            ))
        });
        match arms {
            Ok((ablated, control)) => report.factorial.push(FactorialResult {
                switches,
                scenario,
                ablated,
                control,
            }),
            Err(e) => report.failures.push(SpecFailure {
                switch: plan.ablations[0].switch,
                scenario,
                error: format!("factorial arm: {e}"),
            }),
        }
    }
    report
}
