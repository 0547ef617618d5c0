//! Controller state and the selection kernel.
//!
//! Everything here is a pure function of its arguments: scoring, the
//! admissible set, argmax selection, mode transitions and the forced-queue
//! merge. The side-effecting step lives in [`crate::controller`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::alphabet::{Phase, Symbol, ALPHABET_SIZE};
use crate::features::{feature_index, FeatureVector, FEATURE_DIM, FEATURE_NAMES};
use crate::obligation::ObligationVector;
use crate::workspace::WorkspaceSummary;

pub const DEFAULT_WINDOW: usize = 6;
pub const DEFAULT_RHO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    Seed,
    Generate,
    Harden,
    Tail,
    Halt,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Mode {
    fn phase(self) -> Option<Phase> {
        match self {
            Mode::Seed => Some(Phase::Seed),
            Mode::Generate => Some(Phase::Generate),
            Mode::Harden => Some(Phase::Harden),
            Mode::Tail => Some(Phase::Tail),
            Mode::Halt => None,
        }
    }

    /// Edges of the mode graph, including the LOC-low back edge.
    pub fn has_edge(self, to: Mode) -> bool {
        use Mode::*;
        self == to
            || matches!(
                (self, to),
                (Seed, Generate) | (Generate, Harden) | (Harden, Tail) | (Tail, Halt) | (Harden, Generate)
            )
    }
}

pub fn default_tail() -> Vec<Symbol> {
    use Symbol::*;
    vec![
        FinalGroundingAudit,
        SkepticalAudit,
        ClaimCleanup,
        Critique,
        ResponseToCritique,
        PaperRewrite,
        ReadmeVerification,
        FinalGroundingAudit,
        AcademicPaperPolish,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub workspace: WorkspaceSummary,
    pub mode: Mode,
    pub obligations: ObligationVector,
    pub forced_queue: Vec<Symbol>,
    pub history: Vec<Symbol>,
    pub step: u64,
    pub budget_remaining: u64,
}

impl ControllerState {
    pub fn initial(workspace: WorkspaceSummary, budget: u64) -> Self {
        ControllerState {
            workspace,
            mode: Mode::Seed,
            obligations: ObligationVector::ZERO,
            forced_queue: Vec::new(),
            history: Vec::new(),
            step: 0,
            budget_remaining: budget,
        }
    }

    pub fn is_done(&self) -> bool {
        self.mode == Mode::Halt || self.budget_remaining == 0
    }
}

// ---------------------------------------------------------------- weights

/// One row per symbol: weights over the twelve features and a bias.
///
/// On disk a row is a name-keyed table (`bias` plus feature names); missing
/// names are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightTableSpec", into = "WeightTableSpec")]
pub struct WeightTable {
    pub rows: [[f64; FEATURE_DIM]; ALPHABET_SIZE],
    pub bias: [f64; ALPHABET_SIZE],
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightTableSpec {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub rows: BTreeMap<String, BTreeMap<String, f64>>,
}

fn default_rho() -> f64 {
    DEFAULT_RHO
}

impl WeightTable {
    pub fn zero() -> Self {
        WeightTable {
            rows: [[0.0; FEATURE_DIM]; ALPHABET_SIZE],
            bias: [0.0; ALPHABET_SIZE],
            rho: 0.0,
        }
    }

    pub fn row(&self, p: Symbol) -> &[f64; FEATURE_DIM] {
        &self.rows[p.index()]
    }

    fn set(&mut self, p: Symbol, feature: &str, w: f64) {
        let i = feature_index(feature).expect("known feature");
        self.rows[p.index()][i] = w;
    }

    /// Replace whole rows from a spec; rows the spec does not mention keep
    /// their current values.
    pub fn overlay(&self, spec: &WeightTableSpec) -> Result<WeightTable, String> {
        let mut out = self.clone();
        out.rho = spec.rho;
        for (name, entries) in &spec.rows {
            let sym: Symbol = name.parse().map_err(|e| format!("weights: {e}"))?;
            let mut row = [0.0; FEATURE_DIM];
            let mut bias = 0.0;
            for (key, value) in entries {
                if key == "bias" {
                    bias = *value;
                } else {
                    let i = feature_index(key).ok_or_else(|| format!("weights.{name}: unknown feature `{key}`"))?;
                    row[i] = *value;
                }
            }
            out.rows[sym.index()] = row;
            out.bias[sym.index()] = bias;
        }
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(format!("weights: rho must be finite and >= 0, got {}", self.rho));
        }
        for p in Symbol::ALL {
            let finite = self.row(p).iter().all(|w| w.is_finite()) && self.bias[p.index()].is_finite();
            if !finite {
                return Err(format!("weights.{p}: entries must be finite"));
            }
        }
        Ok(())
    }
}

impl Default for WeightTable {
    fn default() -> Self {
        use Symbol::*;
        let mut t = WeightTable::zero();
        t.rho = DEFAULT_RHO;
        for p in [Ideation, TheoryCreation] {
            t.set(p, "theory_deficit", 1.0);
        }
        for p in [SeedGeneration, SeedUpgrade] {
            t.set(p, "code_deficit", 1.5);
        }
        let harden: [(Symbol, &str, &str); 8] = [
            (PaperStrengthening, "paper_deficit", "obligation_paper_sync"),
            (PaperRewrite, "paper_deficit", "obligation_paper_sync"),
            (ClaimCleanup, "paper_deficit", "obligation_paper_sync"),
            (ReadmeVerification, "readme_deficit", "obligation_readme_sync"),
            (BenchmarkTightening, "benchmark_deficit", "obligation_bench"),
            (BenchmarkSearch, "benchmark_deficit", "obligation_bench"),
            (GroundingCreation, "grounding_deficit", "obligation_ground"),
            (SkepticalAudit, "grounding_deficit", "obligation_audit"),
        ];
        for (p, deficit, axis) in harden {
            t.set(p, deficit, 1.0);
            t.set(p, axis, 2.0);
        }
        t.set(PortfolioExpansion, "code_deficit", 1.0);
        t
    }
}

impl TryFrom<WeightTableSpec> for WeightTable {
    type Error = String;

    fn try_from(spec: WeightTableSpec) -> Result<Self, Self::Error> {
        WeightTable::zero().overlay(&spec)
    }
}

impl From<WeightTable> for WeightTableSpec {
    fn from(t: WeightTable) -> Self {
        let rows = Symbol::ALL
            .iter()
            .map(|p| {
                let mut entries: BTreeMap<String, f64> = FEATURE_NAMES
                    .iter()
                    .zip(t.row(*p))
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(n, w)| (n.to_string(), *w))
                    .collect();
                if t.bias[p.index()] != 0.0 {
                    entries.insert("bias".into(), t.bias[p.index()]);
                }
                (p.id().to_string(), entries)
            })
            .collect();
        WeightTableSpec { rho: t.rho, rows }
    }
}

// ---------------------------------------------------------------- kernel config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuardConfig {
    /// Installable repos with a README needed to leave Generate.
    pub min_repos: usize,
    /// Code deficit above which Harden also admits Generate-phase prompts.
    pub loc_low: f64,
    /// Expansive prompts stop this many steps before the tail so their
    /// grounding pair completes first.
    pub expansion_margin: u64,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig {
            min_repos: 1,
            loc_low: 0.7,
            expansion_margin: 2,
        }
    }
}

/// Everything the pure kernel needs to decide admissibility and modes.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub weights: WeightTable,
    pub window: usize,
    pub tail: Vec<Symbol>,
    pub guards: GuardConfig,
    /// Never admissible (used by ablations).
    pub disabled: Vec<Symbol>,
    /// Whether Harden may admit expansive prompts at all.
    pub harden_expansion: bool,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            weights: WeightTable::default(),
            window: DEFAULT_WINDOW,
            tail: default_tail(),
            guards: GuardConfig::default(),
            disabled: Vec::new(),
            harden_expansion: true,
        }
    }
}

impl KernelConfig {
    pub fn tail_len(&self) -> u64 {
        self.tail.len() as u64
    }
}

// ---------------------------------------------------------------- scoring

/// `<w_p, feat> + b_p - rho * count(p in history) / window`.
pub fn score(p: Symbol, feat: &FeatureVector, history: &[Symbol], weights: &WeightTable, window: usize) -> f64 {
    let dot: f64 = weights.row(p).iter().zip(feat.0.iter()).map(|(w, f)| w * f).sum();
    let count = history.iter().filter(|h| **h == p).count() as f64;
    let recency = if window == 0 {
        0.0
    } else {
        weights.rho * count / window as f64
    };
    dot + weights.bias[p.index()] - recency
}

pub fn all_scores(
    feat: &FeatureVector,
    history: &[Symbol],
    weights: &WeightTable,
    window: usize,
) -> [f64; ALPHABET_SIZE] {
    let mut out = [0.0; ALPHABET_SIZE];
    for p in Symbol::ALL {
        out[p.index()] = score(p, feat, history, weights, window);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissibleRule {
    Forced,
    Tail,
    Guard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Admissible {
    pub rule: AdmissibleRule,
    /// Sorted by alphabet index.
    pub symbols: Vec<Symbol>,
}

/// Position in the tail sequence, if the tail override is active.
pub fn tail_position(mode: Mode, budget_remaining: u64, tail_len: u64) -> Option<usize> {
    if tail_len == 0 || budget_remaining == 0 {
        return None;
    }
    if budget_remaining <= tail_len {
        Some((tail_len - budget_remaining) as usize)
    } else if mode == Mode::Tail {
        Some((budget_remaining % tail_len) as usize)
    } else {
        None
    }
}

/// The tail override first, then the forced shell, then the mode guard.
///
/// # Panics
/// If `mode` is `Halt`; callers stop the loop before asking.
pub fn admissible(
    mode: Mode,
    forced_queue: &[Symbol],
    budget_remaining: u64,
    code_deficit: f64,
    cfg: &KernelConfig,
) -> Admissible {
    assert!(mode != Mode::Halt, "admissible asked in Halt");
    if let Some(i) = tail_position(mode, budget_remaining, cfg.tail_len()) {
        return Admissible {
            rule: AdmissibleRule::Tail,
            symbols: vec![cfg.tail[i]],
        };
    }
    if let Some(head) = forced_queue.first() {
        return Admissible {
            rule: AdmissibleRule::Forced,
            symbols: vec![*head],
        };
    }
    let phase = mode.phase().expect("not Halt");
    let loc_low = mode == Mode::Harden && code_deficit > cfg.guards.loc_low;
    let near_tail = budget_remaining <= cfg.tail_len() + cfg.guards.expansion_margin;
    let allowed = |p: &Symbol| {
        !cfg.disabled.contains(p)
            && !(p.is_expansive() && near_tail)
            && !(p.is_expansive() && mode == Mode::Harden && !cfg.harden_expansion)
    };
    let mut symbols: Vec<Symbol> = Symbol::ALL
        .iter()
        .copied()
        .filter(|p| p.phase() == phase || (loc_low && p.phase() == Phase::Generate))
        .filter(allowed)
        .collect();
    if symbols.is_empty() {
        symbols = Symbol::ALL
            .iter()
            .copied()
            .filter(|p| p.phase() == Phase::Harden && !p.is_expansive() && !cfg.disabled.contains(p))
            .collect();
    }
    Admissible {
        rule: AdmissibleRule::Guard,
        symbols,
    }
}

/// Highest score; ties go to the smallest alphabet index.
pub fn select(adm: &Admissible, scores: &[f64; ALPHABET_SIZE]) -> Symbol {
    let mut best = *adm.symbols.first().expect("admissible set is nonempty");
    for p in &adm.symbols[1..] {
        let (s, b) = (scores[p.index()], scores[best.index()]);
        if s > b || (s == b && p.index() < best.index()) {
            best = *p;
        }
    }
    best
}

/// At most one edge per step.
pub fn mode_transition(mode: Mode, w: &WorkspaceSummary, budget_remaining: u64, cfg: &KernelConfig) -> Mode {
    match mode {
        Mode::Seed if w.theory.present && w.theory.thesis.is_some() => Mode::Generate,
        Mode::Generate if w.built_repo_count() >= cfg.guards.min_repos && w.has_paper_skeleton() => Mode::Harden,
        Mode::Harden if budget_remaining <= cfg.tail_len() => Mode::Tail,
        Mode::Tail if budget_remaining == 0 => Mode::Halt,
        m => m,
    }
}

/// Next forced queue: trigger injections, then the static follow-ups, then
/// whatever was still queued. A follow-up block equal to the injection block
/// is dropped and consecutive duplicates collapse.
pub fn merge_forced(injections: &[Symbol], follow: &[Symbol], rest: &[Symbol]) -> Vec<Symbol> {
    let mut out: Vec<Symbol> = injections.to_vec();
    if follow != injections {
        out.extend_from_slice(follow);
    }
    out.extend_from_slice(rest);
    out.dedup();
    out
}

pub fn push_history(history: &[Symbol], p: Symbol, window: usize) -> Vec<Symbol> {
    let mut h = history.to_vec();
    h.push(p);
    let excess = h.len().saturating_sub(window);
    h.drain(..excess);
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{extract_features, DeficitConfig};
    use crate::workspace::{RepoInfo, RepoSurface, TheorySurface};

    fn feat(v: [f64; FEATURE_DIM]) -> FeatureVector {
        FeatureVector(v)
    }

    #[test]
    fn hand_dot_product() {
        let mut w = WeightTable::zero();
        w.rows[Symbol::Ideation.index()][0] = 1.0;
        w.bias[Symbol::Ideation.index()] = 0.1;
        let mut f = [0.0; FEATURE_DIM];
        f[0] = 0.7;
        f[1] = 0.3;
        let s = score(Symbol::Ideation, &feat(f), &[], &w, 6);
        assert!((s - 0.8).abs() < 1e-15);
        assert_eq!(score(Symbol::Critique, &feat(f), &[Symbol::Critique], &w, 6), 0.0);
    }

    #[test]
    fn recency_penalty() {
        let w = WeightTable::default();
        let f = feat([0.0; FEATURE_DIM]);
        let h = [Symbol::Critique, Symbol::Ideation, Symbol::Critique];
        assert_eq!(score(Symbol::Critique, &f, &h, &w, 6), -0.5 * 2.0 / 6.0);
    }

    #[test]
    fn seed_mode_admits_seed_symbols() {
        let a = admissible(Mode::Seed, &[], 40, 1.0, &KernelConfig::default());
        assert_eq!(a.symbols, vec![Symbol::Ideation, Symbol::TheoryCreation]);
        assert_eq!(a.rule, AdmissibleRule::Guard);
    }

    #[test]
    fn forced_head_is_the_only_choice() {
        let q = [Symbol::GroundingCreation, Symbol::SkepticalAudit];
        let a = admissible(Mode::Harden, &q, 30, 0.0, &KernelConfig::default());
        assert_eq!(a.symbols, vec![Symbol::GroundingCreation]);
    }

    #[test]
    fn tail_override_at_nine() {
        let cfg = KernelConfig::default();
        let a = admissible(Mode::Harden, &[], 9, 0.0, &cfg);
        assert_eq!(a.symbols, vec![Symbol::FinalGroundingAudit]);
        assert_eq!(a.rule, AdmissibleRule::Tail);
        let a = admissible(Mode::Tail, &[], 1, 0.0, &cfg);
        assert_eq!(a.symbols, vec![Symbol::AcademicPaperPolish]);
        let a = admissible(Mode::Harden, &[Symbol::GroundingCreation], 3, 0.0, &cfg);
        assert_eq!(a.symbols, vec![cfg.tail[6]]);
    }

    #[test]
    fn loc_low_widens_harden() {
        let cfg = KernelConfig::default();
        let a = admissible(Mode::Harden, &[], 30, 0.9, &cfg);
        assert!(a.symbols.contains(&Symbol::SeedUpgrade));
        let a = admissible(Mode::Harden, &[], 30, 0.7, &cfg);
        assert!(!a.symbols.contains(&Symbol::SeedUpgrade));
        assert!(a.symbols.contains(&Symbol::PortfolioExpansion));
    }

    #[test]
    fn expansive_blocked_near_tail_with_fallback() {
        let cfg = KernelConfig::default();
        let a = admissible(Mode::Harden, &[], 11, 0.9, &cfg);
        assert!(a.symbols.iter().all(|p| !p.is_expansive()));
        let a = admissible(Mode::Generate, &[], 11, 0.9, &cfg);
        assert!(!a.symbols.is_empty());
        assert!(a
            .symbols
            .iter()
            .all(|p| p.phase() == Phase::Harden && !p.is_expansive()));
        let a = admissible(Mode::Generate, &[], 12, 0.9, &cfg);
        assert_eq!(a.symbols, vec![Symbol::SeedGeneration, Symbol::SeedUpgrade]);
    }

    #[test]
    fn disabled_and_frozen_expansion() {
        let cfg = KernelConfig {
            disabled: vec![Symbol::BenchmarkSearch],
            harden_expansion: false,
            ..KernelConfig::default()
        };
        let a = admissible(Mode::Harden, &[], 30, 0.9, &cfg);
        assert!(!a.symbols.contains(&Symbol::BenchmarkSearch));
        assert!(a.symbols.iter().all(|p| !p.is_expansive()));
    }

    #[test]
    fn tie_breaks_to_smallest_index() {
        let adm = Admissible {
            rule: AdmissibleRule::Guard,
            symbols: vec![Symbol::PaperStrengthening, Symbol::SkepticalAudit],
        };
        let scores = [0.0; ALPHABET_SIZE];
        assert_eq!(select(&adm, &scores), Symbol::PaperStrengthening);
        let mut scores = [0.0; ALPHABET_SIZE];
        scores[Symbol::SkepticalAudit.index()] = 1e-12;
        assert_eq!(select(&adm, &scores), Symbol::SkepticalAudit);
    }

    #[test]
    fn weakest_benchmarks_fire_benchmark_tightening() {
        let mut w = WorkspaceSummary::default();
        w.public_projection.paper_words = 5000;
        w.public_projection.readme_words = 1000;
        w.evidence.grounded_claim_ratio = 1.0;
        w.evidence.test_pass_ratio = 1.0;
        w.repo_forest.repos.push(RepoInfo {
            loc: 5000,
            ..RepoInfo::default()
        });
        let f = extract_features(&w, &ObligationVector::ZERO, &DeficitConfig::default());
        let cfg = KernelConfig::default();
        let adm = admissible(Mode::Harden, &[], 30, f.code_deficit(), &cfg);
        let scores = all_scores(&f, &[], &cfg.weights, cfg.window);
        assert_eq!(select(&adm, &scores), Symbol::BenchmarkTightening);
    }

    #[test]
    fn mode_edges() {
        let cfg = KernelConfig::default();
        let mut w = WorkspaceSummary::default();
        assert_eq!(mode_transition(Mode::Harden, &w, 10, &cfg), Mode::Harden);
        assert_eq!(mode_transition(Mode::Harden, &w, 9, &cfg), Mode::Tail);
        assert_eq!(mode_transition(Mode::Tail, &w, 0, &cfg), Mode::Halt);
        assert_eq!(mode_transition(Mode::Seed, &w, 0, &cfg), Mode::Seed);
        w.theory = TheorySurface {
            present: true,
            thesis: Some("x".into()),
            ..TheorySurface::default()
        };
        assert_eq!(mode_transition(Mode::Seed, &w, 30, &cfg), Mode::Generate);
        assert_eq!(mode_transition(Mode::Generate, &w, 30, &cfg), Mode::Generate);
        w.repo_forest = RepoSurface {
            repos: vec![RepoInfo {
                installable: true,
                has_readme: true,
                ..RepoInfo::default()
            }],
        };
        w.public_projection.paper_files = vec!["paper/main.tex".into()];
        assert_eq!(mode_transition(Mode::Generate, &w, 30, &cfg), Mode::Harden);
        for a in [Mode::Seed, Mode::Generate, Mode::Harden, Mode::Tail] {
            for b in [0, 5, 9, 10, 30] {
                assert!(a.has_edge(mode_transition(a, &w, b, &cfg)));
            }
        }
    }

    #[test]
    fn merge_rules() {
        use Symbol::*;
        let pair = [GroundingCreation, SkepticalAudit];
        assert_eq!(merge_forced(&pair, &pair, &[]), pair.to_vec());
        assert_eq!(
            merge_forced(&[], &pair, &[SkepticalAudit]),
            vec![GroundingCreation, SkepticalAudit]
        );
        assert_eq!(
            merge_forced(&pair, &[], &[SkepticalAudit]),
            vec![GroundingCreation, SkepticalAudit]
        );
        assert_eq!(merge_forced(&[], &[], &[SkepticalAudit]), vec![SkepticalAudit]);
    }

    #[test]
    fn history_window() {
        let mut h = Vec::new();
        for p in Symbol::ALL {
            h = push_history(&h, p, 6);
            assert!(h.len() <= 6);
        }
        assert_eq!(h.last(), Some(&Symbol::BenchmarkSearch));
    }

    #[test]
    fn weight_spec_round_trip_and_errors() {
        let t = WeightTable::default();
        let spec: WeightTableSpec = t.clone().into();
        assert_eq!(WeightTable::try_from(spec).unwrap(), t);
        let mut bad = WeightTableSpec::default();
        bad.rows
            .insert("Critique".into(), BTreeMap::from([("nonsense".to_string(), 1.0)]));
        assert!(WeightTable::try_from(bad).unwrap_err().contains("nonsense"));
        let mut bad = WeightTableSpec::default();
        bad.rows.insert("Nope".into(), BTreeMap::new());
        assert!(WeightTable::try_from(bad).is_err());
        let bad = WeightTableSpec {
            rho: -1.0,
            rows: BTreeMap::new(),
        };
        assert!(WeightTable::try_from(bad).is_err());
    }
}
