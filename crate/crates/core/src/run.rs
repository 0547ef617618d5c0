//! Run loop, checkpoints, resume and replay.
//!
//! State directory layout (default `<workspace>/.cesm`):
//!
//! ```text
//! trace.json                    every TraceRecord so far, canonical JSON array
//! checkpoints/step-0000.json    state before any step
//! checkpoints/step-NNNN.json    state after NNNN completed steps
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alphabet::{follow_up, Symbol};
use crate::canonical::{to_canonical_string, write_atomic};
use crate::config::{ConfigError, ExecutorSettings, RunConfig, Settings};
use crate::controller::{Controller, StepError};
use crate::kernel::{
    admissible, all_scores, merge_forced, push_history, select, AdmissibleRule, ControllerState, KernelConfig, Mode,
};
use crate::obligation::{pressure_bound, Hooks, PushTable};
use crate::trace::{
    ends_with_tail, follow_up_violations, gate_is_fail_closed, load_trace, max_pressure, propagation_violations,
    save_trace, TraceError, TraceRecord,
};

pub const TRACE_FILE: &str = "trace.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
/// Obligation dimension, the `k` of the pressure bound.
pub const PRESSURE_K: u32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("step {step}: {source}")]
    Step {
        step: u64,
        #[source]
        source: StepError,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {detail}")]
    BadCheckpoint { path: String, detail: String },
    #[error("checkpoint was written under config {expected}, but the given config hashes to {found}; refusing to resume with a different configuration")]
    ConfigMismatch { expected: String, found: String },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    /// The configuration with every path made absolute.
    pub config: RunConfig,
    pub state: ControllerState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub final_mode: Mode,
    pub budget_remaining: u64,
    pub max_pressure: f64,
    /// `None` when decay is off and no bound exists.
    pub pressure_bound: Option<f64>,
    pub propagation_violations: usize,
    pub follow_up_violations: usize,
    pub gate_fail_closed: bool,
    /// Whether the run ended with the configured tail; `None` if it did not
    /// finish its budget.
    pub tail_completed: Option<bool>,
}

impl RunSummary {
    /// The exit-code contract: no propagation violations.
    pub fn ok(&self) -> bool {
        self.propagation_violations == 0
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub state: ControllerState,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Stop after this many completed steps (simulates an interruption).
    pub stop_after: Option<u64>,
    /// Write trace and checkpoints to the state directory.
    pub persist: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            stop_after: None,
            persist: true,
        }
    }
}

pub fn trace_path(settings: &Settings) -> PathBuf {
    settings.state_dir.join(TRACE_FILE)
}

pub fn checkpoint_path(settings: &Settings, step: u64) -> PathBuf {
    settings
        .state_dir
        .join(CHECKPOINT_DIR)
        .join(format!("step-{step:04}.json"))
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// The raw config with resolved absolute paths, so a checkpoint can be
/// resumed from any working directory.
fn portable_config(settings: &Settings) -> RunConfig {
    let mut raw = settings.raw.clone();
    raw.run.workspace = absolute(&settings.workspace);
    raw.run.state_dir = Some(absolute(&settings.state_dir));
    if let Some(script) = &raw.executor.script {
        raw.executor.script = Some(absolute(&settings.base.join(script)));
    }
    if let crate::templates::TemplateSource::Dir(d) = &settings.templates {
        raw.executor.templates = Some(absolute(d));
    }
    raw
}

fn write_checkpoint(settings: &Settings, state: &ControllerState) -> Result<(), RunError> {
    let cp = Checkpoint {
        config_hash: settings.config_hash.clone(),
        config: portable_config(settings),
        state: state.clone(),
    };
    let path = checkpoint_path(settings, state.step);
    let text = to_canonical_string(&cp).map_err(|e| io(&path)(std::io::Error::other(e)))?;
    write_atomic(&path, text.as_bytes()).map_err(io(&path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, RunError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| RunError::BadCheckpoint {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

pub fn summarize_run(trace: &[TraceRecord], state: &ControllerState, settings: &Settings) -> RunSummary {
    let bound = pressure_bound(PRESSURE_K, settings.push.alpha_max(), settings.lambda).ok();
    let finished = state.budget_remaining == 0;
    RunSummary {
        steps: trace.len() as u64,
        final_mode: state.mode,
        budget_remaining: state.budget_remaining,
        max_pressure: max_pressure(trace),
        pressure_bound: bound,
        propagation_violations: if settings.trigger {
            propagation_violations(trace).len()
        } else {
            0
        },
        follow_up_violations: follow_up_violations(trace).len(),
        gate_fail_closed: gate_is_fail_closed(trace),
        tail_completed: (finished && settings.budget >= settings.kernel.tail_len())
            .then(|| ends_with_tail(trace, &settings.kernel.tail)),
    }
}

fn drive(
    settings: &Settings,
    mut state: ControllerState,
    mut trace: Vec<TraceRecord>,
    opts: RunOptions,
    observer: &mut dyn FnMut(&TraceRecord),
) -> Result<RunOutput, RunError> {
    let mut controller = Controller::new(settings);
    while !state.is_done() && opts.stop_after.is_none_or(|n| state.step < n) {
        let step = state.step;
        let (next, record) = controller
            .transition(&state)
            .map_err(|source| RunError::Step { step, source })?;
        observer(&record);
        trace.push(record);
        state = next;
        if opts.persist {
            save_trace(&trace, &trace_path(settings)).map_err(io(&trace_path(settings)))?;
            write_checkpoint(settings, &state)?;
        }
    }
    let summary = summarize_run(&trace, &state, settings);
    Ok(RunOutput { trace, state, summary })
}

/// Run from the initial state. Mock runs create the workspace and apply the
/// script's setup effects first.
pub fn run(settings: &Settings, opts: RunOptions) -> Result<RunOutput, RunError> {
    run_observed(settings, opts, &mut |_| {})
}

pub fn run_observed(
    settings: &Settings,
    opts: RunOptions,
    observer: &mut dyn FnMut(&TraceRecord),
) -> Result<RunOutput, RunError> {
    let root = &settings.workspace;
    if let ExecutorSettings::Mock { script, .. } = &settings.executor {
        fs::create_dir_all(root).map_err(io(root))?;
        script.apply_setup(root).map_err(|e| RunError::Step {
            step: 0,
            source: e.into(),
        })?;
    }
    if !root.is_dir() {
        return Err(io(root)(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            "workspace root does not exist",
        )));
    }
    if opts.persist {
        let cps = settings.state_dir.join(CHECKPOINT_DIR);
        if cps.exists() {
            fs::remove_dir_all(&cps).map_err(io(&cps))?;
        }
    }
    let controller = Controller::new(settings);
    let workspace = controller
        .summarize(0)
        .map_err(|source| RunError::Step { step: 0, source })?;
    let state = ControllerState::initial(workspace, settings.budget);
    if opts.persist {
        save_trace(&[], &trace_path(settings)).map_err(io(&trace_path(settings)))?;
        write_checkpoint(settings, &state)?;
    }
    drive(settings, state, Vec::new(), opts, observer)
}

/// Settings a checkpoint was written under, rebuilt from its embedded config.
pub fn checkpoint_settings(cp: &Checkpoint) -> Result<Settings, RunError> {
    Ok(Settings::resolve(cp.config.clone(), Path::new("/"))?)
}

/// Continue from a checkpoint. With `settings` given, its hash must match
/// the checkpoint's; otherwise the embedded config is used.
pub fn resume(checkpoint: &Path, settings: Option<&Settings>, opts: RunOptions) -> Result<RunOutput, RunError> {
    let cp = load_checkpoint(checkpoint)?;
    let embedded;
    let settings = match settings {
        Some(s) => s,
        None => {
            embedded = checkpoint_settings(&cp)?;
            &embedded
        }
    };
    if settings.config_hash != cp.config_hash {
        return Err(RunError::ConfigMismatch {
            expected: cp.config_hash,
            found: settings.config_hash.clone(),
        });
    }
    let tp = trace_path(settings);
    let mut trace = if tp.exists() { load_trace(&tp)? } else { Vec::new() };
    let done = cp.state.step as usize;
    if trace.len() < done {
        return Err(RunError::BadCheckpoint {
            path: checkpoint.display().to_string(),
            detail: format!("trace has {} records but the checkpoint is at step {done}", trace.len()),
        });
    }
    trace.truncate(done);
    let on_disk = Controller::new(settings)
        .summarize(cp.state.step)
        .map_err(|source| RunError::Step {
            step: cp.state.step,
            source,
        })?;
    if on_disk.digest() != cp.state.workspace.digest() {
        tracing::warn!(
            "workspace on disk differs from the checkpoint at step {}; continuing from the checkpoint state",
            cp.state.step
        );
    }
    if opts.persist {
        save_trace(&trace, &tp).map_err(io(&tp))?;
    }
    drive(settings, cp.state, trace, opts, &mut |_| {})
}

// ---------------------------------------------------------------- replay

/// What re-selection needs: the kernel, decay and push tables.
#[derive(Debug, Clone)]
pub struct ReplayParams {
    pub kernel: KernelConfig,
    pub lambda: f64,
    pub push: PushTable,
    pub trigger: bool,
}

impl Default for ReplayParams {
    fn default() -> Self {
        ReplayParams {
            kernel: KernelConfig::default(),
            lambda: crate::obligation::default_lambda(),
            push: PushTable::default(),
            trigger: true,
        }
    }
}

impl From<&Settings> for ReplayParams {
    fn from(s: &Settings) -> Self {
        ReplayParams {
            kernel: s.kernel.clone(),
            lambda: s.lambda,
            push: s.push.clone(),
            trigger: s.trigger,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: u64,
    pub field: String,
    pub recorded: String,
    pub replayed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub steps_checked: usize,
    pub divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.divergence.is_none()
    }
}

fn diverge<T: std::fmt::Debug + PartialEq>(step: u64, field: &str, recorded: &T, replayed: &T) -> Option<Divergence> {
    (recorded != replayed).then(|| Divergence {
        step,
        field: field.to_string(),
        recorded: format!("{recorded:?}"),
        replayed: format!("{replayed:?}"),
    })
}

fn replay_record(r: &TraceRecord, prev: Option<&TraceRecord>, params: &ReplayParams) -> Option<Divergence> {
    let k = &params.kernel;
    let t = r.step;
    if let Some(p) = prev {
        let checks = [
            diverge(t, "step", &r.step, &(p.step + 1)),
            diverge(t, "forced_queue_before", &r.forced_queue_before, &p.forced_queue),
            diverge(
                t,
                "history",
                &r.history,
                &push_history(&p.history, p.selected, k.window),
            ),
            diverge(t, "mode", &r.mode, &p.mode_after),
            diverge(
                t,
                "budget_remaining",
                &r.budget_remaining,
                &(p.budget_remaining.saturating_sub(1)),
            ),
        ];
        if let Some(d) = checks.into_iter().flatten().next() {
            return Some(d);
        }
    }
    let scores = all_scores(&r.features, &r.history, &k.weights, k.window);
    for q in Symbol::ALL {
        let recorded = r.scores.get(&q).copied();
        if recorded.map(f64::to_bits) != Some(scores[q.index()].to_bits()) {
            return Some(Divergence {
                step: t,
                field: format!("scores.{q}"),
                recorded: format!("{recorded:?}"),
                replayed: format!("{:?}", scores[q.index()]),
            });
        }
    }
    let adm = admissible(
        r.mode,
        &r.forced_queue_before,
        r.budget_remaining,
        r.features.code_deficit(),
        k,
    );
    if let Some(d) = diverge(t, "admissible_rule", &r.admissible_rule, &adm.rule)
        .or_else(|| diverge(t, "admissible", &r.admissible, &adm.symbols))
        .or_else(|| diverge(t, "selected", &r.selected, &select(&adm, &scores)))
    {
        return Some(d);
    }
    let rest: Vec<Symbol> = match adm.rule {
        AdmissibleRule::Forced => r.forced_queue_before[1..].to_vec(),
        AdmissibleRule::Tail => Vec::new(),
        AdmissibleRule::Guard => r.forced_queue_before.clone(),
    };
    let follow: &[Symbol] = if r.executed() { follow_up(r.selected) } else { &[] };
    let queue = merge_forced(&r.injections, follow, &rest);
    if let Some(d) = diverge(t, "forced_queue", &r.forced_queue, &queue) {
        return Some(d);
    }
    let prev_o = prev.map(|p| p.obligations).unwrap_or_default();
    let hooks = if params.trigger {
        Hooks {
            paper: r.diff.paper_changed(),
            readme: r.diff.readme_changed(),
        }
    } else {
        Hooks::default()
    };
    let o = prev_o
        .decayed(params.lambda)
        .plus(&params.push.step_push(r.executed().then_some(r.selected), hooks));
    if prev.is_some() || r.step == 0 {
        if let Some(d) = diverge(t, "obligations", &r.obligations.to_array(), &o.to_array()) {
            return Some(d);
        }
    }
    None
}

/// Re-run selection on every record and report the first field that does
/// not reproduce. The first record of a partial trace (step > 0) is checked
/// without continuity or obligation checks.
pub fn replay(trace: &[TraceRecord], params: &ReplayParams) -> ReplayReport {
    let mut prev: Option<&TraceRecord> = None;
    for (i, r) in trace.iter().enumerate() {
        if let Some(d) = replay_record(r, prev, params) {
            return ReplayReport {
                steps_checked: i,
                divergence: Some(d),
            };
        }
        prev = Some(r);
    }
    ReplayReport {
        steps_checked: trace.len(),
        divergence: None,
    }
}
