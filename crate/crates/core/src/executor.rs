//! The boundary through which a selected prompt acts on the workspace.
//!
//! [`ProcessExecutor`] hands the rendered prompt to an external agent
//! command. [`MockExecutor`] replays a JSON effect script and is what every
//! deterministic test and ablation runs on.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::process::Stdio;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::alphabet::{Phase, Symbol};
use crate::gate::PROPOSAL_FILE;
use crate::ledger::LEDGER_FILE;
use crate::process::{run_detached, shell, DetachedOutcome};
use crate::workspace::{TEST_REPORT_FILE, THEORY_FILE};

pub const TRANSCRIPT_DIR: &str = ".cesm/transcripts";
pub const AGENT_CMD_ENV: &str = "CESM_AGENT_CMD";
/// Extra time a runner may take beyond its timeout before it counts as hung.
pub const KILL_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Succeeded,
    Failed,
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionRequest {
    pub symbol: Symbol,
    pub prompt: String,
    pub root: PathBuf,
    pub step: u64,
    pub timeout: Duration,
    pub env: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionResult {
    pub outcome: Outcome,
    pub reason: Option<String>,
    /// Relative to the workspace root.
    pub transcript: String,
    pub duration: Duration,
    /// Well-known files present after the run (`expansion.json`, ...).
    pub artifacts: Vec<String>,
    /// Scripted marker: this step planted an unsupported claim.
    pub fabrication: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ExecutorError {
    #[error("mock script exhausted: step {step} is beyond its length {length}")]
    ScriptExhausted { step: u64, length: u64 },
    #[error("effect path `{0}` escapes the workspace root")]
    PathEscape(String),
    #[error("invalid mock script {path}: {detail}")]
    BadScript { path: String, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExecutorError + '_ {
    move |source| ExecutorError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub trait Executor {
    fn execute(&mut self, req: &ExecutionRequest) -> Result<ExecutionResult, ExecutorError>;
}

pub fn transcript_rel(step: u64) -> String {
    format!("{TRANSCRIPT_DIR}/step-{step}.log")
}

fn declared_artifacts(root: &Path) -> Vec<String> {
    [PROPOSAL_FILE, TEST_REPORT_FILE, LEDGER_FILE]
        .into_iter()
        .filter(|f| root.join(f).is_file())
        .map(str::to_string)
        .collect()
}

// ---------------------------------------------------------------- real runner

/// Runs a shell command template per step. `{prompt_file}` and `{root}` in
/// the template are replaced; the prompt also arrives on stdin and its file
/// path in `CESM_PROMPT_FILE`.
#[derive(Debug, Clone)]
pub struct ProcessExecutor {
    pub command: String,
}

impl ProcessExecutor {
    pub fn new(command: impl Into<String>) -> Self {
        ProcessExecutor {
            command: command.into(),
        }
    }

    /// `CESM_AGENT_CMD` wins over the configured command.
    pub fn from_env_or(configured: &str) -> Self {
        match std::env::var(AGENT_CMD_ENV) {
            Ok(cmd) if !cmd.trim().is_empty() => ProcessExecutor::new(cmd),
            _ => ProcessExecutor::new(configured),
        }
    }
}

impl Executor for ProcessExecutor {
    fn execute(&mut self, req: &ExecutionRequest) -> Result<ExecutionResult, ExecutorError> {
        let rel = transcript_rel(req.step);
        let transcript = req.root.join(&rel);
        let dir = transcript.parent().expect("transcript has a parent");
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let prompt_file = dir.join(format!("step-{}.prompt", req.step));
        fs::write(&prompt_file, &req.prompt).map_err(io_err(&prompt_file))?;

        let mut log = File::create(&transcript).map_err(io_err(&transcript))?;
        writeln!(log, "# step={} symbol={}", req.step, req.symbol).map_err(io_err(&transcript))?;
        let err_log = log.try_clone().map_err(io_err(&transcript))?;

        let command = self
            .command
            .replace("{prompt_file}", &prompt_file.display().to_string())
            .replace("{root}", &req.root.display().to_string());
        let mut cmd = shell(&command);
        cmd.current_dir(&req.root)
            .envs(&req.env)
            .env("CESM_PROMPT_FILE", &prompt_file)
            .env("CESM_STEP", req.step.to_string())
            .env("CESM_SYMBOL", req.symbol.id())
            .env("CESM_ROOT", &req.root)
            .stdout(Stdio::from(log))
            .stderr(Stdio::from(err_log));

        let start = Instant::now();
        let status = run_detached(cmd, req.prompt.clone().into_bytes(), req.timeout);
        let duration = start.elapsed();
        let (outcome, reason) = match status {
            DetachedOutcome::Exited(s) if s.success() => (Outcome::Succeeded, None),
            DetachedOutcome::Exited(s) => (Outcome::Failed, Some(format!("agent exited with {s}"))),
            DetachedOutcome::TimedOut => (Outcome::TimedOut, Some(format!("timed out after {:?}", req.timeout))),
            DetachedOutcome::SpawnFailed(e) => (Outcome::Failed, Some(format!("spawn failed: {e}"))),
        };
        if let Some(r) = &reason {
            let mut log = OpenOptions::new()
                .append(true)
                .open(&transcript)
                .map_err(io_err(&transcript))?;
            writeln!(log, "# {r}").map_err(io_err(&transcript))?;
        }
        Ok(ExecutionResult {
            outcome,
            reason,
            transcript: rel,
            duration,
            artifacts: declared_artifacts(&req.root),
            fabrication: false,
        })
    }
}

// ---------------------------------------------------------------- mock runner

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum Effect {
    Write {
        path: String,
        content: String,
    },
    Append {
        path: String,
        content: String,
        #[serde(default = "one")]
        repeat: u32,
    },
    Delete {
        path: String,
    },
}

fn one() -> u32 {
    1
}

impl Effect {
    pub fn path(&self) -> &str {
        match self {
            Effect::Write { path, .. } | Effect::Append { path, .. } | Effect::Delete { path } => path,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub step: u64,
    /// Only applies when this symbol runs at that step.
    #[serde(default)]
    pub symbol: Option<Symbol>,
    #[serde(default)]
    pub effects: Vec<Effect>,
    #[serde(default)]
    pub outcome: Option<Outcome>,
    #[serde(default)]
    pub fabrication: bool,
}

/// Effect script: `setup` seeds the workspace, `symbols` gives what each
/// prompt does whenever it runs, `steps` adds step-specific effects.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    pub length: u64,
    #[serde(default)]
    pub setup: Vec<Effect>,
    #[serde(default)]
    pub symbols: BTreeMap<Symbol, Vec<Effect>>,
    #[serde(default)]
    pub steps: Vec<ScriptStep>,
}

impl MockScript {
    pub fn parse(text: &str, origin: &str) -> Result<MockScript, ExecutorError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let script: MockScript = serde_path_to_error::deserialize(de).map_err(|e| ExecutorError::BadScript {
            path: origin.to_string(),
            detail: e.to_string(),
        })?;
        script.validate().map_err(|detail| ExecutorError::BadScript {
            path: origin.to_string(),
            detail,
        })?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<MockScript, ExecutorError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        MockScript::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = self
            .setup
            .iter()
            .chain(self.symbols.values().flatten())
            .chain(self.steps.iter().flat_map(|s| &s.effects));
        for e in all {
            if !is_contained(e.path()) {
                return Err(format!("effect path `{}` escapes the workspace root", e.path()));
            }
        }
        if let Some(s) = self.steps.iter().find(|s| s.step >= self.length) {
            return Err(format!("step {} is beyond the script length {}", s.step, self.length));
        }
        Ok(())
    }

    /// Write the setup effects into a fresh workspace.
    pub fn apply_setup(&self, root: &Path) -> Result<(), ExecutorError> {
        for e in &self.setup {
            apply_effect(root, e, 0)?;
        }
        Ok(())
    }
}

fn is_contained(rel: &str) -> bool {
    !rel.is_empty()
        && Path::new(rel)
            .components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

fn apply_effect(root: &Path, e: &Effect, step: u64) -> Result<(), ExecutorError> {
    if !is_contained(e.path()) {
        return Err(ExecutorError::PathEscape(e.path().to_string()));
    }
    let path = root.join(e.path());
    let expand = |s: &str| s.replace("{step}", &step.to_string());
    match e {
        Effect::Write { content, .. } => {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            fs::write(&path, expand(content)).map_err(io_err(&path))
        }
        Effect::Append { content, repeat, .. } => {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(io_err(&path))?;
            let text = expand(content).repeat(*repeat as usize);
            f.write_all(text.as_bytes()).map_err(io_err(&path))
        }
        Effect::Delete { .. } => match fs::remove_file(&path) {
            Err(err) if err.kind() != std::io::ErrorKind::NotFound => Err(io_err(&path)(err)),
            _ => Ok(()),
        },
    }
}

/// Effects the mock silently drops, used to simulate a disabled component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EffectFilter {
    /// Theory frozen after seeding: only Seed-phase prompts may touch THEORY.md.
    pub freeze_theory: bool,
    /// No grounding ledger: writes to `grounding.json` are dropped.
    pub drop_ledger: bool,
    /// No paper-first seeding: SeedGeneration writes nothing under `paper/`.
    pub drop_seed_paper: bool,
}

impl EffectFilter {
    pub fn keeps(&self, symbol: Symbol, e: &Effect) -> bool {
        let p = e.path();
        if self.freeze_theory && p == THEORY_FILE && symbol.phase() != Phase::Seed {
            return false;
        }
        if self.drop_ledger && p == LEDGER_FILE {
            return false;
        }
        if self.drop_seed_paper && symbol == Symbol::SeedGeneration && p.starts_with("paper/") {
            return false;
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct MockExecutor {
    pub script: MockScript,
    pub filter: EffectFilter,
}

impl MockExecutor {
    pub fn new(script: MockScript) -> Self {
        MockExecutor {
            script,
            filter: EffectFilter::default(),
        }
    }

    pub fn with_filter(script: MockScript, filter: EffectFilter) -> Self {
        MockExecutor { script, filter }
    }
}

impl Executor for MockExecutor {
    fn execute(&mut self, req: &ExecutionRequest) -> Result<ExecutionResult, ExecutorError> {
        if req.step >= self.script.length {
            return Err(ExecutorError::ScriptExhausted {
                step: req.step,
                length: self.script.length,
            });
        }
        let scripted: Vec<&ScriptStep> = self
            .script
            .steps
            .iter()
            .filter(|s| s.step == req.step && s.symbol.is_none_or(|sym| sym == req.symbol))
            .collect();
        let effects = self
            .script
            .symbols
            .get(&req.symbol)
            .into_iter()
            .flatten()
            .chain(scripted.iter().flat_map(|s| &s.effects));

        let rel = transcript_rel(req.step);
        let mut log = format!("# step={} symbol={}\n{}\n", req.step, req.symbol, req.prompt);
        for e in effects {
            if self.filter.keeps(req.symbol, e) {
                apply_effect(&req.root, e, req.step)?;
                log.push_str(&format!(
                    "# applied {}\n",
                    serde_json::to_string(e).expect("effect serializes")
                ));
            } else {
                log.push_str(&format!("# dropped {}\n", e.path()));
            }
        }
        let outcome = scripted.iter().find_map(|s| s.outcome).unwrap_or(Outcome::Succeeded);
        let transcript = req.root.join(&rel);
        if let Some(dir) = transcript.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(&transcript, log).map_err(io_err(&transcript))?;
        Ok(ExecutionResult {
            outcome,
            reason: (outcome != Outcome::Succeeded).then(|| "scripted outcome".to_string()),
            transcript: rel,
            duration: Duration::ZERO,
            artifacts: declared_artifacts(&req.root),
            fabrication: scripted.iter().any(|s| s.fabrication),
        })
    }
}
