//! One controller transition: score, select, gate, execute, re-summarize,
//! trigger, update obligations and queue, advance the mode.

use std::fs;
use std::path::{Path, PathBuf};

use crate::alphabet::{follow_up, Symbol};
use crate::canonical::sha256_hex;
use crate::config::{ExecutorSettings, JudgeSettings, Settings};
use crate::executor::{ExecutionRequest, Executor, ExecutorError, MockExecutor, ProcessExecutor};
use crate::features::extract_features;
use crate::gate::{check_adjacency, read_proposal, AdjacencyVerdict, CommandJudge, Judge, PROPOSAL_FILE};
use crate::kernel::{
    admissible, all_scores, merge_forced, mode_transition, push_history, select, AdmissibleRule, ControllerState,
};
use crate::obligation::{pressure, Hooks};
use crate::templates::{render_prompt, RenderError};
use crate::trace::{StepOutcome, TraceRecord};
use crate::trigger::{commit_step, diff_file_maps, ensure_git_tree, forced_injection, hash_tracked, TriggerError};
use crate::workspace::{summarize_workspace_with, WorkspaceError};

pub const PROPOSAL_ARCHIVE: &str = ".cesm/proposals";

#[derive(Debug, thiserror::Error)]
pub enum StepError {
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error(transparent)]
    Workspace(#[from] WorkspaceError),
    #[error(transparent)]
    Trigger(#[from] TriggerError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("no transition possible: {0}")]
    Finished(String),
}

/// Handles a transition needs besides the state itself.
pub struct Controller<'a> {
    pub settings: &'a Settings,
    pub executor: Box<dyn Executor + 'a>,
    pub judge: Box<dyn Judge + 'a>,
}

pub fn build_executor(settings: &Settings) -> Box<dyn Executor> {
    match &settings.executor {
        ExecutorSettings::Mock { script, filter } => Box::new(MockExecutor::with_filter(script.clone(), *filter)),
        ExecutorSettings::Process { command } => Box::new(ProcessExecutor::from_env_or(command)),
    }
}

pub fn build_judge(settings: &Settings) -> Box<dyn Judge> {
    match &settings.judge {
        JudgeSettings::Heuristic(h) => Box::new(h.clone()),
        JudgeSettings::Command { command, timeout } => Box::new(CommandJudge::new(command.clone(), *timeout)),
    }
}

impl<'a> Controller<'a> {
    pub fn new(settings: &'a Settings) -> Self {
        Controller {
            settings,
            executor: build_executor(settings),
            judge: build_judge(settings),
        }
    }

    pub fn root(&self) -> &Path {
        &self.settings.workspace
    }

    /// Summary of the workspace as it is on disk now.
    pub fn summarize(&self, step: u64) -> Result<crate::workspace::WorkspaceSummary, StepError> {
        Ok(summarize_workspace_with(self.root(), step, &self.settings.tracked)?)
    }

    /// Take the pending proposal out of the workspace so it is judged once.
    fn take_proposal(&self, step: u64) -> Result<Result<crate::gate::ExpansionProposal, String>, StepError> {
        let proposal = read_proposal(self.root());
        let src = self.root().join(PROPOSAL_FILE);
        if src.exists() {
            let dir = self.root().join(PROPOSAL_ARCHIVE);
            fs::create_dir_all(&dir).map_err(|source| StepError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            let dst: PathBuf = dir.join(format!("step-{step}.json"));
            fs::rename(&src, &dst).map_err(|source| StepError::Io {
                path: src.display().to_string(),
                source,
            })?;
        }
        Ok(proposal)
    }

    pub fn transition(&mut self, state: &ControllerState) -> Result<(ControllerState, TraceRecord), StepError> {
        if state.is_done() {
            return Err(StepError::Finished(format!(
                "mode {} with budget {}",
                state.mode, state.budget_remaining
            )));
        }
        let s = self.settings;
        let k = &s.kernel;
        let t = state.step;

        let features = extract_features(&state.workspace, &state.obligations, &s.deficits);
        let adm = admissible(
            state.mode,
            &state.forced_queue,
            state.budget_remaining,
            features.code_deficit(),
            k,
        );
        let scores = all_scores(&features, &state.history, &k.weights, k.window);
        let p = select(&adm, &scores);

        let (rest, dropped_forced) = match adm.rule {
            AdmissibleRule::Forced => (state.forced_queue[1..].to_vec(), Vec::new()),
            AdmissibleRule::Tail => (Vec::new(), state.forced_queue.clone()),
            AdmissibleRule::Guard => (state.forced_queue.clone(), Vec::new()),
        };

        let prompt = render_prompt(p, &state.workspace, &s.templates, s.batch_target)?;

        let verdict: Option<AdjacencyVerdict> =
            if p.is_expansive() && s.gate && !state.workspace.repo_forest.repos.is_empty() {
                Some(match self.take_proposal(t)? {
                    Ok(proposal) => check_adjacency(&proposal, &state.workspace, self.root(), self.judge.as_ref()),
                    Err(reason) => AdjacencyVerdict::rejected(&reason),
                })
            } else {
                None
            };
        let gate_passed = verdict.as_ref().is_none_or(|v| v.pass);

        let before = hash_tracked(self.root(), &s.tracked)?;
        let (outcome, reason, transcript, fabrication) = if gate_passed {
            let req = ExecutionRequest {
                symbol: p,
                prompt: prompt.text.clone(),
                root: self.root().to_path_buf(),
                step: t,
                timeout: s.timeout,
                env: s.env.clone(),
            };
            let r = self.executor.execute(&req)?;
            (
                StepOutcome::from(r.outcome),
                r.reason,
                Some(r.transcript),
                r.fabrication,
            )
        } else {
            (
                StepOutcome::GateRejected,
                Some("adjacency gate rejected the proposal".to_string()),
                None,
                false,
            )
        };
        let after = hash_tracked(self.root(), &s.tracked)?;
        let diff = diff_file_maps(&before, &after);
        let workspace = self.summarize(t + 1)?;

        let executed = outcome != StepOutcome::GateRejected;
        let raw_injection = if s.trigger {
            forced_injection(&diff, p)
        } else {
            Vec::new()
        };
        let (injections, suppressed_injections) = if adm.rule == AdmissibleRule::Tail {
            (Vec::new(), raw_injection)
        } else {
            (raw_injection, Vec::new())
        };
        let follow: &[Symbol] = if executed { follow_up(p) } else { &[] };
        let forced_queue = merge_forced(&injections, follow, &rest);

        let hooks = if s.trigger {
            Hooks {
                paper: diff.paper_changed(),
                readme: diff.readme_changed(),
            }
        } else {
            Hooks::default()
        };
        let push = s.push.step_push(executed.then_some(p), hooks);
        let obligations = state.obligations.decayed(s.lambda).plus(&push);

        let budget_remaining = state.budget_remaining - 1;
        let mode_after = mode_transition(state.mode, &workspace, budget_remaining, k);

        if s.git.commit {
            ensure_git_tree(self.root(), s.git.auto_init)?;
            if let Err(e) = commit_step(self.root(), t, p) {
                tracing::warn!("step {t}: bookkeeping commit failed: {e}");
            }
        }

        let record = TraceRecord {
            step: t,
            mode: state.mode,
            budget_remaining: state.budget_remaining,
            pre_digest: state.workspace.digest(),
            features,
            history: state.history.clone(),
            forced_queue_before: state.forced_queue.clone(),
            scores: Symbol::ALL.iter().map(|q| (*q, scores[q.index()])).collect(),
            admissible_rule: adm.rule,
            admissible: adm.symbols.clone(),
            selected: p,
            prompt_digest: sha256_hex(prompt.text.as_bytes()),
            verdict,
            outcome,
            reason,
            transcript,
            fabrication,
            diff,
            injections,
            suppressed_injections,
            dropped_forced,
            forced_queue: forced_queue.clone(),
            obligations,
            pressure: pressure(&obligations),
            post_digest: workspace.digest(),
            mode_after,
        };
        let next = ControllerState {
            workspace,
            mode: mode_after,
            obligations,
            forced_queue,
            history: push_history(&state.history, p, k.window),
            step: t + 1,
            budget_remaining,
        };
        Ok((next, record))
    }
}
