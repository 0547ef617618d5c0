//! The 17-symbol prompt alphabet, its phase and surface tags, and the static
//! follow-up table.
//!
//! Alphabet order is the declaration order below and doubles as the
//! tie-break order for selection. It never changes between versions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Development phase a prompt belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Seed,
    Generate,
    Harden,
    Tail,
}

/// Artifact surface of the workspace a prompt edits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Surface {
    /// Theory documents.
    Theory,
    /// Repository forest.
    Repos,
    /// Paper and READMEs.
    Public,
    /// Benchmarks, tests, grounding ledger.
    Evidence,
    /// Utility hypothesis.
    Utility,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symbol {
    Ideation,
    TheoryCreation,
    SeedGeneration,
    SeedUpgrade,
    PaperStrengthening,
    #[serde(rename = "READMEVerification")]
    ReadmeVerification,
    BenchmarkTightening,
    GroundingCreation,
    SkepticalAudit,
    PaperRewrite,
    ClaimCleanup,
    PortfolioExpansion,
    FinalGroundingAudit,
    Critique,
    ResponseToCritique,
    AcademicPaperPolish,
    BenchmarkSearch,
}

pub const ALPHABET_SIZE: usize = 17;

/// The pair every expansive step and every public-facing change is followed by.
pub const GROUNDING_PAIR: [Symbol; 2] = [Symbol::GroundingCreation, Symbol::SkepticalAudit];

const _: () = assert!(Symbol::ALL.len() == ALPHABET_SIZE);

impl Symbol {
    pub const ALL: [Symbol; ALPHABET_SIZE] = [
        Symbol::Ideation,
        Symbol::TheoryCreation,
        Symbol::SeedGeneration,
        Symbol::SeedUpgrade,
        Symbol::PaperStrengthening,
        Symbol::ReadmeVerification,
        Symbol::BenchmarkTightening,
        Symbol::GroundingCreation,
        Symbol::SkepticalAudit,
        Symbol::PaperRewrite,
        Symbol::ClaimCleanup,
        Symbol::PortfolioExpansion,
        Symbol::FinalGroundingAudit,
        Symbol::Critique,
        Symbol::ResponseToCritique,
        Symbol::AcademicPaperPolish,
        Symbol::BenchmarkSearch,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Symbol> {
        Symbol::ALL.get(index).copied()
    }

    /// Stable identifier, also the template file stem.
    pub fn id(self) -> &'static str {
        match self {
            Symbol::Ideation => "Ideation",
            Symbol::TheoryCreation => "TheoryCreation",
            Symbol::SeedGeneration => "SeedGeneration",
            Symbol::SeedUpgrade => "SeedUpgrade",
            Symbol::PaperStrengthening => "PaperStrengthening",
            Symbol::ReadmeVerification => "READMEVerification",
            Symbol::BenchmarkTightening => "BenchmarkTightening",
            Symbol::GroundingCreation => "GroundingCreation",
            Symbol::SkepticalAudit => "SkepticalAudit",
            Symbol::PaperRewrite => "PaperRewrite",
            Symbol::ClaimCleanup => "ClaimCleanup",
            Symbol::PortfolioExpansion => "PortfolioExpansion",
            Symbol::FinalGroundingAudit => "FinalGroundingAudit",
            Symbol::Critique => "Critique",
            Symbol::ResponseToCritique => "ResponseToCritique",
            Symbol::AcademicPaperPolish => "AcademicPaperPolish",
            Symbol::BenchmarkSearch => "BenchmarkSearch",
        }
    }

    pub fn phase(self) -> Phase {
        use Symbol::*;
        match self {
            Ideation | TheoryCreation => Phase::Seed,
            SeedGeneration | SeedUpgrade => Phase::Generate,
            PaperStrengthening | ReadmeVerification | BenchmarkTightening | GroundingCreation | SkepticalAudit
            | PaperRewrite | ClaimCleanup | PortfolioExpansion | BenchmarkSearch => Phase::Harden,
            FinalGroundingAudit | Critique | ResponseToCritique | AcademicPaperPolish => Phase::Tail,
        }
    }

    /// Expansive prompts create new material and owe a grounding-then-audit pass.
    pub fn is_expansive(self) -> bool {
        matches!(
            self,
            Symbol::SeedGeneration | Symbol::SeedUpgrade | Symbol::PortfolioExpansion
        )
    }

    /// Surfaces the prompt is coded as touching. Single source of truth for
    /// the tag table documented in `docs/formats.md`.
    pub fn surfaces(self) -> &'static [Surface] {
        use Surface::*;
        match self {
            Symbol::Ideation => &[Theory, Utility],
            Symbol::TheoryCreation => &[Theory],
            Symbol::SeedGeneration => &[Repos, Public],
            Symbol::SeedUpgrade => &[Repos, Evidence],
            Symbol::PaperStrengthening => &[Theory, Public],
            Symbol::ReadmeVerification => &[Public],
            Symbol::BenchmarkTightening => &[Evidence],
            Symbol::GroundingCreation => &[Evidence],
            Symbol::SkepticalAudit => &[Evidence, Public],
            Symbol::PaperRewrite => &[Public],
            Symbol::ClaimCleanup => &[Public],
            Symbol::PortfolioExpansion => &[Repos, Utility],
            Symbol::FinalGroundingAudit => &[Evidence],
            Symbol::Critique => &[Public],
            Symbol::ResponseToCritique => &[Repos, Public],
            Symbol::AcademicPaperPolish => &[Public],
            Symbol::BenchmarkSearch => &[Evidence],
        }
    }

    /// Symbols that count as a grounding pass: they are exempt from the
    /// public-change trigger because editing the paper is their job.
    pub fn is_grounding_pass(self) -> bool {
        matches!(
            self,
            Symbol::GroundingCreation | Symbol::SkepticalAudit | Symbol::FinalGroundingAudit
        )
    }
}

/// Static follow-up table: expansive symbols schedule the grounding pair,
/// everything else schedules nothing.
pub fn follow_up(symbol: Symbol) -> &'static [Symbol] {
    if symbol.is_expansive() {
        &GROUNDING_PAIR
    } else {
        &[]
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown prompt symbol `{0}`")]
pub struct UnknownSymbol(pub String);

impl FromStr for Symbol {
    type Err = UnknownSymbol;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Symbol::ALL
            .iter()
            .copied()
            .find(|sym| sym.id() == s)
            .ok_or_else(|| UnknownSymbol(s.to_string()))
    }
}
