//! Controlled expansion state machine: a finite-state controller that
//! schedules agent prompts over a research workspace, with decaying
//! obligations, a public-diff grounding trigger, an adjacency gate for
//! expansive prompts and a grounding ledger.

pub mod ablation;
pub mod alphabet;
pub mod canonical;
pub mod config;
pub mod controller;
pub mod executor;
pub mod features;
pub mod gate;
pub mod kernel;
pub mod ledger;
pub mod obligation;
pub mod process;
pub mod run;
pub mod templates;
pub mod trace;
pub mod trigger;
pub mod workspace;

pub use alphabet::{follow_up, Phase, Surface, Symbol, ALPHABET_SIZE, GROUNDING_PAIR};
pub use config::{RunConfig, Settings, Switch};
pub use controller::Controller;
pub use executor::{Executor, MockExecutor, MockScript, ProcessExecutor};
pub use features::{extract_features, DeficitConfig, FeatureVector, FEATURE_DIM, FEATURE_NAMES};
pub use gate::{check_adjacency, AdjacencyVerdict, ExpansionProposal, HeuristicJudge, Judge};
pub use kernel::{admissible, mode_transition, score, select, ControllerState, KernelConfig, Mode, WeightTable};
pub use ledger::{audit_claims, AuditOptions, AuditReport, ClaimRecord, ClaimStatus, Ledger};
pub use obligation::{pressure, pressure_bound, ObligationVector, PushTable};
pub use run::{replay, resume, run, RunOptions, RunOutput, RunSummary};
pub use trace::{persistence_depth, TraceRecord};
pub use trigger::{DiffReport, GitSnapshot, TrackedPatterns};
pub use workspace::{summarize_workspace, WorkspaceSummary};
