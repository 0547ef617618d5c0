//! Decaying obligation memory.
//!
//! Five nonnegative axes record follow-up work that is still owed. Each step
//! the vector decays by `lambda` and receives the push of the executed prompt:
//! `o' = lambda * o + push(p)`. With `lambda < 1` the L1 pressure stays below
//! `k * alpha_max / (1 - lambda)` forever.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::alphabet::Symbol;

pub const OBLIGATION_DIM: usize = 5;

pub const AXIS_NAMES: [&str; OBLIGATION_DIM] = ["ground", "audit", "bench", "paper_sync", "readme_sync"];

/// Default decay factor, `2^(-1/8)`: a half-life of eight steps.
pub fn default_lambda() -> f64 {
    (-0.125f64).exp2()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObligationVector {
    pub ground: f64,
    pub audit: f64,
    pub bench: f64,
    pub paper_sync: f64,
    pub readme_sync: f64,
}

impl ObligationVector {
    pub const ZERO: ObligationVector = ObligationVector {
        ground: 0.0,
        audit: 0.0,
        bench: 0.0,
        paper_sync: 0.0,
        readme_sync: 0.0,
    };

    pub fn from_array(a: [f64; OBLIGATION_DIM]) -> Self {
        ObligationVector {
            ground: a[0],
            audit: a[1],
            bench: a[2],
            paper_sync: a[3],
            readme_sync: a[4],
        }
    }

    pub fn to_array(self) -> [f64; OBLIGATION_DIM] {
        [self.ground, self.audit, self.bench, self.paper_sync, self.readme_sync]
    }

    pub fn decayed(self, lambda: f64) -> Self {
        Self::from_array(self.to_array().map(|x| lambda * x))
    }

    pub fn plus(self, push: &[f64; OBLIGATION_DIM]) -> Self {
        let mut a = self.to_array();
        for (x, p) in a.iter_mut().zip(push) {
            *x += p;
        }
        Self::from_array(a)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.to_array().iter().all(|x| *x >= 0.0)
    }
}

/// The push map from prompt symbols to obligation increments, plus the two
/// hooks applied when a step changed paper or README files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PushTable {
    #[serde(default)]
    pub push: BTreeMap<Symbol, [f64; OBLIGATION_DIM]>,
    #[serde(default = "default_paper_hook")]
    pub paper_hook: [f64; OBLIGATION_DIM],
    #[serde(default = "default_readme_hook")]
    pub readme_hook: [f64; OBLIGATION_DIM],
}

fn default_paper_hook() -> [f64; OBLIGATION_DIM] {
    [0.0, 0.0, 0.0, 1.0, 0.0]
}

fn default_readme_hook() -> [f64; OBLIGATION_DIM] {
    [0.0, 0.0, 0.0, 0.0, 1.0]
}

impl Default for PushTable {
    fn default() -> Self {
        let push = Symbol::ALL
            .iter()
            .filter(|s| s.is_expansive())
            .map(|s| (*s, [1.0, 1.0, 0.5, 0.0, 0.0]))
            .collect();
        PushTable {
            push,
            paper_hook: default_paper_hook(),
            readme_hook: default_readme_hook(),
        }
    }
}

/// Which post-step hooks fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Hooks {
    pub paper: bool,
    pub readme: bool,
}

impl PushTable {
    pub fn alpha(&self, symbol: Symbol) -> [f64; OBLIGATION_DIM] {
        self.push.get(&symbol).copied().unwrap_or([0.0; OBLIGATION_DIM])
    }

    /// Largest single-step increment any axis can receive: the worst symbol
    /// row plus both hooks. Equals the largest table entry for the default
    /// table, where hooks and symbol rows touch disjoint axes.
    pub fn alpha_max(&self) -> f64 {
        (0..OBLIGATION_DIM)
            .map(|i| {
                let row_max = self.push.values().map(|r| r[i]).fold(0.0, f64::max);
                row_max + self.paper_hook[i] + self.readme_hook[i]
            })
            .fold(0.0, f64::max)
    }

    /// Total increment for one step.
    pub fn step_push(&self, symbol: Option<Symbol>, hooks: Hooks) -> [f64; OBLIGATION_DIM] {
        let mut out = symbol.map(|s| self.alpha(s)).unwrap_or([0.0; OBLIGATION_DIM]);
        for (i, x) in out.iter_mut().enumerate() {
            if hooks.paper {
                *x += self.paper_hook[i];
            }
            if hooks.readme {
                *x += self.readme_hook[i];
            }
        }
        out
    }

    pub fn validate(&self) -> Result<(), String> {
        let rows = self.push.iter().map(|(s, r)| (s.id().to_string(), r)).chain([
            ("paper_hook".to_string(), &self.paper_hook),
            ("readme_hook".to_string(), &self.readme_hook),
        ]);
        for (name, row) in rows {
            if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(format!("push entry `{name}` must be finite and nonnegative"));
            }
        }
        if self.push.keys().any(|s| s.is_expansive()) && self.alpha_max() <= 0.0 {
            return Err("alpha_max must be positive when expansive symbols push".into());
        }
        Ok(())
    }
}

/// `lambda * o + alpha(p)`.
pub fn decay_and_push(o: ObligationVector, p: Symbol, table: &PushTable, lambda: f64) -> ObligationVector {
    o.decayed(lambda).plus(&table.alpha(p))
}

pub fn pressure(o: &ObligationVector) -> f64 {
    o.to_array().iter().map(|x| x.abs()).sum()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("decay factor {0} outside (0, 1): pressure is unbounded")]
pub struct DomainError(pub f64);

/// `k * alpha_max / (1 - lambda)`.
pub fn pressure_bound(k: u32, alpha_max: f64, lambda: f64) -> Result<f64, DomainError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(DomainError(lambda));
    }
    Ok(f64::from(k) * alpha_max / (1.0 - lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_life_is_eight_steps() {
        let lambda = default_lambda();
        let mut o = ObligationVector {
            ground: 1.0,
            ..ObligationVector::ZERO
        };
        for _ in 0..8 {
            o = decay_and_push(o, Symbol::PaperRewrite, &PushTable::default(), lambda);
        }
        assert!((o.ground - 0.5).abs() < 1e-12, "{}", o.ground);
        assert_eq!(o.audit, 0.0);
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let o = decay_and_push(ObligationVector::ZERO, Symbol::Critique, &PushTable::default(), 0.9);
        assert_eq!(o, ObligationVector::ZERO);
    }

    #[test]
    fn repeated_push_converges_to_geometric_limit() {
        let lambda = default_lambda();
        let table = PushTable {
            push: [(Symbol::SeedGeneration, [1.0, 1.0, 0.0, 0.0, 0.0])].into(),
            ..PushTable::default()
        };
        let mut o = ObligationVector::ZERO;
        for _ in 0..200 {
            o = decay_and_push(o, Symbol::SeedGeneration, &table, lambda);
        }
        // 1 / (1 - 2^(-1/8)), evaluated with mpmath at 50 digits.
        let limit = 12.048779707016795;
        assert!((o.ground - limit).abs() < 1e-6);
        assert!((o.audit - limit).abs() < 1e-6);
        assert_eq!(o.bench, 0.0);
    }

    #[test]
    fn pressure_examples() {
        assert_eq!(pressure(&ObligationVector::ZERO), 0.0);
        let o = ObligationVector::from_array([1.0, 2.0, 3.0, 0.0, 0.0]);
        assert_eq!(pressure(&o), 6.0);
    }

    #[test]
    fn pressure_bound_examples() {
        assert_eq!(pressure_bound(5, 0.0, 0.3).unwrap(), 0.0);
        assert_eq!(pressure_bound(1, 1.0, 0.5).unwrap(), 2.0);
        // 5 / (1 - 2^(-1/8)) from mpmath at 50 digits.
        let b = pressure_bound(5, 1.0, default_lambda()).unwrap();
        assert!((b - 60.24389853508398).abs() < 1e-9);
        assert!(pressure_bound(5, 1.0, 1.0).is_err());
        assert!(pressure_bound(5, 1.0, 0.0).is_err());
    }

    #[test]
    fn default_table_alpha_max_is_one() {
        let t = PushTable::default();
        assert_eq!(t.alpha_max(), 1.0);
        assert_eq!(t.alpha(Symbol::PortfolioExpansion), [1.0, 1.0, 0.5, 0.0, 0.0]);
        assert_eq!(t.alpha(Symbol::GroundingCreation), [0.0; 5]);
        t.validate().unwrap();
    }

    #[test]
    fn negative_push_rejected() {
        let mut t = PushTable::default();
        t.paper_hook[0] = -1.0;
        assert!(t.validate().is_err());
    }

    fn naive_sum(v: &[f64; 5]) -> f64 {
        let mut s = 0.0;
        for x in v {
            s += x;
        }
        s
    }

    proptest! {
        #[test]
        fn pressure_matches_naive_sum(a in prop::array::uniform5(0.0f64..1e6)) {
            prop_assert_eq!(pressure(&ObligationVector::from_array(a)), naive_sum(&a));
        }

        #[test]
        fn decay_is_linear(
            o1 in prop::array::uniform5(0.0f64..100.0),
            o2 in prop::array::uniform5(0.0f64..100.0),
            a in 0.0f64..10.0,
            b in 0.0f64..10.0,
        ) {
            let lambda = default_lambda();
            let zero = PushTable { push: BTreeMap::new(), ..PushTable::default() };
            let mut mix = [0.0; 5];
            for i in 0..5 {
                mix[i] = a * o1[i] + b * o2[i];
            }
            let lhs = decay_and_push(ObligationVector::from_array(mix), Symbol::Ideation, &zero, lambda);
            let d1 = decay_and_push(ObligationVector::from_array(o1), Symbol::Ideation, &zero, lambda);
            let d2 = decay_and_push(ObligationVector::from_array(o2), Symbol::Ideation, &zero, lambda);
            for i in 0..5 {
                let rhs = a * d1.to_array()[i] + b * d2.to_array()[i];
                prop_assert!((lhs.to_array()[i] - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn forgetting_is_strictly_monotone(o in prop::array::uniform5(1e-3f64..1e3)) {
            let v = ObligationVector::from_array(o);
            let next = decay_and_push(v, Symbol::Critique, &PushTable::default(), default_lambda());
            for (before, after) in v.to_array().iter().zip(next.to_array()) {
                prop_assert!(after < *before);
                prop_assert!(after >= 0.0);
            }
        }
    }
}
