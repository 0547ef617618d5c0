//! Run configuration: one TOML document, validated completely at load.
//!
//! Every section is optional; omitted values take the defaults shipped in
//! `config/default.toml`. Relative paths resolve against the config file's
//! directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::alphabet::Symbol;
use crate::canonical::{canonical_digest, sha256_hex};
use crate::executor::{EffectFilter, MockScript};
use crate::features::DeficitConfig;
use crate::gate::HeuristicJudge;
use crate::kernel::{default_tail, GuardConfig, KernelConfig, WeightTable, WeightTableSpec, DEFAULT_WINDOW};
use crate::obligation::{default_lambda, PushTable, OBLIGATION_DIM};
use crate::templates::{validate_templates, TemplateSource};
use crate::trigger::{default_tracked_patterns, TrackedPatterns};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {detail}")]
    Parse { path: String, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub workspace: PathBuf,
    /// Trace and checkpoint directory; defaults to `<workspace>/.cesm`.
    pub state_dir: Option<PathBuf>,
    pub budget: u64,
    pub batch_target_repos: u64,
    /// Reserved; the controller core is deterministic and never draws from it.
    pub seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            workspace: PathBuf::from("workspace"),
            state_dir: None,
            budget: 40,
            batch_target_repos: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutorKind {
    Mock,
    Process,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExecutorSection {
    pub kind: ExecutorKind,
    pub script: Option<PathBuf>,
    /// Shell template; `{prompt_file}` and `{root}` are substituted.
    pub command: String,
    pub timeout_secs: u64,
    pub env: BTreeMap<String, String>,
    /// Directory of `<symbol>.prompt` files; built-in templates when absent.
    pub templates: Option<PathBuf>,
}

impl Default for ExecutorSection {
    fn default() -> Self {
        ExecutorSection {
            kind: ExecutorKind::Mock,
            script: None,
            command: String::new(),
            timeout_secs: 1800,
            env: BTreeMap::new(),
            templates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    pub window: usize,
    pub tail: Vec<Symbol>,
}

impl Default for ControllerSection {
    fn default() -> Self {
        ControllerSection {
            window: DEFAULT_WINDOW,
            tail: default_tail(),
        }
    }
}

/// Overlay on the default push table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObligationSection {
    pub lambda: f64,
    pub push: BTreeMap<Symbol, [f64; OBLIGATION_DIM]>,
    pub paper_hook: Option<[f64; OBLIGATION_DIM]>,
    pub readme_hook: Option<[f64; OBLIGATION_DIM]>,
}

impl Default for ObligationSection {
    fn default() -> Self {
        ObligationSection {
            lambda: default_lambda(),
            push: BTreeMap::new(),
            paper_hook: None,
            readme_hook: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeKind {
    Heuristic,
    Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateSection {
    pub enabled: bool,
    pub judge: JudgeKind,
    pub command: String,
    pub timeout_secs: u64,
    pub heuristic: HeuristicJudge,
}

impl Default for GateSection {
    fn default() -> Self {
        GateSection {
            enabled: true,
            judge: JudgeKind::Heuristic,
            command: String::new(),
            timeout_secs: 120,
            heuristic: HeuristicJudge::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerSection {
    pub enabled: bool,
    pub tracked: Vec<String>,
}

impl Default for TriggerSection {
    fn default() -> Self {
        TriggerSection {
            enabled: true,
            tracked: default_tracked_patterns(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GitSection {
    /// Commit the workspace after every step (`step=<t> symbol=<p>`).
    pub commit: bool,
    /// `git init` the workspace when it is not a git tree yet.
    pub auto_init: bool,
}

impl Default for GitSection {
    fn default() -> Self {
        GitSection {
            commit: false,
            auto_init: true,
        }
    }
}

/// Controller components that can be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Switch {
    Adjacency,
    Ledger,
    PaperFirst,
    Decay,
    Trigger,
    BenchmarkJudge,
}

impl Switch {
    pub const ALL: [Switch; 6] = [
        Switch::Adjacency,
        Switch::Ledger,
        Switch::PaperFirst,
        Switch::Decay,
        Switch::Trigger,
        Switch::BenchmarkJudge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Switch::Adjacency => "adjacency",
            Switch::Ledger => "ledger",
            Switch::PaperFirst => "paper_first",
            Switch::Decay => "decay",
            Switch::Trigger => "trigger",
            Switch::BenchmarkJudge => "benchmark_judge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub off: Vec<Switch>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub executor: ExecutorSection,
    pub controller: ControllerSection,
    pub guards: Option<GuardConfig>,
    pub deficits: DeficitConfig,
    pub obligations: ObligationSection,
    pub weights: Option<WeightTableSpec>,
    pub gate: GateSection,
    pub trigger: TriggerSection,
    pub git: GitSection,
    pub ablation: AblationSection,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<RunConfig, ConfigError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            detail: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<(RunConfig, PathBuf), ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg = RunConfig::parse(&text, &path.display().to_string())?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Debug, Clone)]
pub enum ExecutorSettings {
    Mock { script: MockScript, filter: EffectFilter },
    Process { command: String },
}

#[derive(Debug, Clone)]
pub enum JudgeSettings {
    Heuristic(HeuristicJudge),
    Command { command: String, timeout: Duration },
}

/// A validated configuration with paths resolved and tables built.
#[derive(Debug, Clone)]
pub struct Settings {
    pub raw: RunConfig,
    /// Directory relative paths in `raw` resolve against.
    pub base: PathBuf,
    pub workspace: PathBuf,
    pub state_dir: PathBuf,
    pub budget: u64,
    pub batch_target: u64,
    pub kernel: KernelConfig,
    pub lambda: f64,
    pub push: PushTable,
    pub deficits: DeficitConfig,
    pub tracked: TrackedPatterns,
    pub trigger: bool,
    pub gate: bool,
    pub judge: JudgeSettings,
    pub executor: ExecutorSettings,
    pub timeout: Duration,
    pub env: BTreeMap<String, String>,
    pub templates: TemplateSource,
    pub git: GitSection,
    pub config_hash: String,
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Settings {
    pub fn resolve(raw: RunConfig, base: &Path) -> Result<Settings, ConfigError> {
        let off = |s: Switch| raw.ablation.off.contains(&s);

        if raw.run.budget == 0 && raw.controller.tail.is_empty() {
            return Err(invalid("run.budget = 0 with an empty tail does nothing"));
        }
        if raw.run.batch_target_repos == 0 {
            return Err(invalid("run.batch_target_repos must be >= 1"));
        }
        if raw.controller.window == 0 {
            return Err(invalid("controller.window must be >= 1"));
        }
        if raw.controller.tail.is_empty() {
            return Err(invalid("controller.tail must not be empty"));
        }
        let lambda = raw.obligations.lambda;
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(invalid(format!(
                "obligations.lambda must lie in (0, 1), got {lambda}; switch decay off through [ablation] instead"
            )));
        }
        let lambda = if off(Switch::Decay) { 1.0 } else { lambda };

        let mut push = PushTable::default();
        push.push.extend(raw.obligations.push.iter().map(|(k, v)| (*k, *v)));
        if let Some(h) = raw.obligations.paper_hook {
            push.paper_hook = h;
        }
        if let Some(h) = raw.obligations.readme_hook {
            push.readme_hook = h;
        }
        push.validate().map_err(|e| invalid(format!("obligations: {e}")))?;

        raw.deficits.validate().map_err(|e| invalid(format!("deficits: {e}")))?;

        let weights = match &raw.weights {
            Some(spec) => WeightTable::default().overlay(spec).map_err(invalid)?,
            None => WeightTable::default(),
        };
        let guards = raw.guards.clone().unwrap_or(GuardConfig {
            min_repos: raw.run.batch_target_repos as usize,
            ..GuardConfig::default()
        });
        if !(guards.loc_low.is_finite() && (0.0..=1.0).contains(&guards.loc_low)) {
            return Err(invalid("guards.loc_low must lie in [0, 1]"));
        }
        let mut disabled = Vec::new();
        if off(Switch::BenchmarkJudge) {
            disabled.push(Symbol::BenchmarkSearch);
        }
        let kernel = KernelConfig {
            weights,
            window: raw.controller.window,
            tail: raw.controller.tail.clone(),
            guards,
            disabled,
            harden_expansion: !off(Switch::Adjacency),
        };

        let tracked =
            TrackedPatterns::new(raw.trigger.tracked.clone()).map_err(|e| invalid(format!("trigger.tracked: {e}")))?;

        let judge = match raw.gate.judge {
            JudgeKind::Heuristic => JudgeSettings::Heuristic(raw.gate.heuristic.clone()),
            JudgeKind::Command => {
                if raw.gate.command.trim().is_empty() {
                    return Err(invalid("gate.judge = \"command\" needs gate.command"));
                }
                if raw.gate.timeout_secs == 0 {
                    return Err(invalid("gate.timeout_secs must be > 0"));
                }
                JudgeSettings::Command {
                    command: raw.gate.command.clone(),
                    timeout: Duration::from_secs(raw.gate.timeout_secs),
                }
            }
        };

        if raw.executor.timeout_secs == 0 {
            return Err(invalid("executor.timeout_secs must be > 0"));
        }
        let mut hashed = raw.clone();
        let executor = match raw.executor.kind {
            ExecutorKind::Mock => {
                let rel = raw
                    .executor
                    .script
                    .as_ref()
                    .ok_or_else(|| invalid("executor.kind = \"mock\" needs executor.script"))?;
                let path = resolve_path(base, rel);
                let text = fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let script =
                    MockScript::parse(&text, &path.display().to_string()).map_err(|e| invalid(e.to_string()))?;
                hashed.executor.script = Some(PathBuf::from(sha256_hex(text.as_bytes())));
                let filter = EffectFilter {
                    freeze_theory: off(Switch::Adjacency),
                    drop_ledger: off(Switch::Ledger),
                    drop_seed_paper: off(Switch::PaperFirst),
                };
                ExecutorSettings::Mock { script, filter }
            }
            ExecutorKind::Process => {
                if raw.executor.command.trim().is_empty() && std::env::var_os(crate::executor::AGENT_CMD_ENV).is_none()
                {
                    return Err(invalid(
                        "executor.kind = \"process\" needs executor.command or CESM_AGENT_CMD",
                    ));
                }
                ExecutorSettings::Process {
                    command: raw.executor.command.clone(),
                }
            }
        };

        let templates = match &raw.executor.templates {
            Some(dir) => TemplateSource::Dir(resolve_path(base, dir)),
            None => TemplateSource::Builtin,
        };
        validate_templates(&templates).map_err(|e| invalid(e.to_string()))?;

        let workspace = resolve_path(base, &raw.run.workspace);
        let state_dir = match &raw.run.state_dir {
            Some(d) => resolve_path(base, d),
            None => workspace.join(".cesm"),
        };
        // Paths do not change the trajectory; leave them out of the hash.
        hashed.run.workspace = PathBuf::new();
        hashed.run.state_dir = None;
        hashed.executor.templates = hashed.executor.templates.as_ref().map(|_| PathBuf::from("dir"));
        let config_hash = canonical_digest(&hashed).map_err(|e| invalid(e.to_string()))?;

        Ok(Settings {
            workspace,
            state_dir,
            budget: raw.run.budget,
            batch_target: raw.run.batch_target_repos,
            kernel,
            lambda,
            push,
            deficits: raw.deficits.clone(),
            tracked,
            trigger: !off(Switch::Trigger) && raw.trigger.enabled,
            gate: raw.gate.enabled,
            judge,
            executor,
            timeout: Duration::from_secs(raw.executor.timeout_secs),
            env: raw.executor.env.clone(),
            templates,
            git: raw.git.clone(),
            config_hash,
            base: base.to_path_buf(),
            raw,
        })
    }

    pub fn load(path: &Path) -> Result<Settings, ConfigError> {
        let (raw, base) = RunConfig::load(path)?;
        Settings::resolve(raw, &base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn with_script(dir: &Path, extra: &str) -> Result<Settings, ConfigError> {
        fs::write(dir.join("s.json"), r#"{"length": 40}"#).unwrap();
        let text = format!("[executor]\nkind = \"mock\"\nscript = \"s.json\"\n{extra}");
        Settings::resolve(RunConfig::parse(&text, "t")?, dir)
    }

    #[test]
    fn defaults_resolve() {
        let dir = tempdir().unwrap();
        let s = with_script(dir.path(), "").unwrap();
        assert_eq!(s.budget, 40);
        assert_eq!(s.kernel.window, 6);
        assert_eq!(s.kernel.tail.len(), 9);
        assert_eq!(s.kernel.guards.min_repos, 1);
        assert_eq!(s.lambda, default_lambda());
        assert!(s.trigger && s.gate);
        assert_eq!(s.workspace, dir.path().join("workspace"));
        assert_eq!(s.kernel.weights, WeightTable::default());
    }

    #[test]
    fn unknown_keys_rejected_with_path() {
        let err = RunConfig::parse("[run]\nbudgte = 3\n", "t").unwrap_err();
        assert!(err.to_string().contains("budgte"), "{err}");
    }

    #[test]
    fn invalid_values_abort() {
        let dir = tempdir().unwrap();
        for extra in [
            "[obligations]\nlambda = 1.0\n",
            "[controller]\nwindow = 0\n",
            "[controller]\ntail = []\n",
            "[weights.rows.Critique]\nbogus = 1.0\n",
            "[trigger]\ntracked = [\"[\"]\n",
            "[deficits]\nloc = 0.0\n",
            "[gate]\njudge = \"command\"\n",
        ] {
            assert!(with_script(dir.path(), extra).is_err(), "{extra}");
        }
        let err = Settings::resolve(RunConfig::default(), dir.path()).unwrap_err();
        assert!(err.to_string().contains("executor.script"));
    }

    #[test]
    fn hash_tracks_weights_but_not_paths() {
        let dir = tempdir().unwrap();
        let a = with_script(dir.path(), "").unwrap();
        let b = with_script(dir.path(), "[run]\nworkspace = \"elsewhere\"\n").unwrap();
        let c = with_script(dir.path(), "[weights]\nrho = 0.25\n").unwrap();
        assert_eq!(a.config_hash, b.config_hash);
        assert_ne!(a.config_hash, c.config_hash);
    }

    #[test]
    fn ablation_switches_map_to_mechanisms() {
        let dir = tempdir().unwrap();
        let s = with_script(
            dir.path(),
            "[ablation]\noff = [\"decay\", \"trigger\", \"benchmark_judge\", \"adjacency\", \"ledger\", \"paper_first\"]\n",
        )
        .unwrap();
        assert_eq!(s.lambda, 1.0);
        assert!(!s.trigger);
        assert_eq!(s.kernel.disabled, vec![Symbol::BenchmarkSearch]);
        assert!(!s.kernel.harden_expansion);
        match s.executor {
            ExecutorSettings::Mock { filter, .. } => {
                assert!(filter.freeze_theory && filter.drop_ledger && filter.drop_seed_paper)
            }
            _ => panic!(),
        }
    }

    #[test]
    fn weight_rows_overlay_defaults() {
        let dir = tempdir().unwrap();
        let s = with_script(dir.path(), "[weights.rows.Critique]\nbias = 2.0\n").unwrap();
        assert_eq!(s.kernel.weights.bias[Symbol::Critique.index()], 2.0);
        assert_eq!(
            s.kernel.weights.row(Symbol::GroundingCreation),
            WeightTable::default().row(Symbol::GroundingCreation)
        );
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::parse(&cfg.to_toml(), "t").unwrap();
        assert_eq!(back, cfg);
    }
}
