//! Deficit features the scorer consumes.
//!
//! Twelve named features in a fixed order: seven structural deficits in
//! `[0, 1]` followed by the five obligation axes. Weight files refer to
//! features by name.

use serde::{Deserialize, Serialize};

use crate::obligation::ObligationVector;
use crate::workspace::WorkspaceSummary;

pub const FEATURE_DIM: usize = 12;
pub const DEFICIT_DIM: usize = 7;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "theory_deficit",
    "code_deficit",
    "paper_deficit",
    "readme_deficit",
    "benchmark_deficit",
    "grounding_deficit",
    "test_deficit",
    "obligation_ground",
    "obligation_audit",
    "obligation_bench",
    "obligation_paper_sync",
    "obligation_readme_sync",
];

pub const CODE_DEFICIT: usize = 1;

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).map(|i| self.0[i])
    }

    pub fn code_deficit(&self) -> f64 {
        self.0[CODE_DEFICIT]
    }

    pub fn obligations(&self) -> ObligationVector {
        let mut a = [0.0; 5];
        a.copy_from_slice(&self.0[DEFICIT_DIM..]);
        ObligationVector::from_array(a)
    }
}

/// Per-surface targets; a surface at or above its target has zero deficit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeficitConfig {
    pub theory_words: f64,
    pub loc: f64,
    pub paper_words: f64,
    pub readme_words: f64,
    pub benchmarks: f64,
    pub ledger_coverage: f64,
    pub test_pass_ratio: f64,
}

impl Default for DeficitConfig {
    fn default() -> Self {
        DeficitConfig {
            theory_words: 400.0,
            loc: 1500.0,
            paper_words: 2000.0,
            readme_words: 300.0,
            benchmarks: 4.0,
            ledger_coverage: 1.0,
            test_pass_ratio: 1.0,
        }
    }
}

impl DeficitConfig {
    pub fn validate(&self) -> Result<(), String> {
        let targets = [
            ("theory_words", self.theory_words),
            ("loc", self.loc),
            ("paper_words", self.paper_words),
            ("readme_words", self.readme_words),
            ("benchmarks", self.benchmarks),
            ("ledger_coverage", self.ledger_coverage),
            ("test_pass_ratio", self.test_pass_ratio),
        ];
        for (name, v) in targets {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("deficit target `{name}` must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// `max(0, 1 - observed / target)`, clamped to `[0, 1]`.
pub fn deficit(observed: f64, target: f64) -> f64 {
    let d = 1.0 - observed / target;
    if d.is_nan() {
        1.0
    } else {
        d.clamp(0.0, 1.0)
    }
}

pub fn extract_features(w: &WorkspaceSummary, o: &ObligationVector, cfg: &DeficitConfig) -> FeatureVector {
    let observed = [
        (w.theory.word_count as f64, cfg.theory_words),
        (w.repo_forest.total_loc() as f64, cfg.loc),
        (w.public_projection.paper_words as f64, cfg.paper_words),
        (w.public_projection.readme_words as f64, cfg.readme_words),
        (w.evidence.benchmark_count() as f64, cfg.benchmarks),
        (w.evidence.grounded_claim_ratio, cfg.ledger_coverage),
        (w.evidence.test_pass_ratio, cfg.test_pass_ratio),
    ];
    let mut f = [0.0; FEATURE_DIM];
    for (slot, (obs, target)) in f.iter_mut().zip(observed) {
        *slot = deficit(obs, target);
    }
    f[DEFICIT_DIM..].copy_from_slice(&o.to_array());
    FeatureVector(f)
}
