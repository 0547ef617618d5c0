//! Prompt text rendering.
//!
//! Each symbol has a plain-text template `<symbol_id>.prompt`. Placeholders
//! of the form `{{name}}` are filled from the workspace summary; an unknown
//! placeholder is an error, never an empty string.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::alphabet::Symbol;
use crate::workspace::WorkspaceSummary;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("missing template for {symbol} at {path}")]
    MissingTemplate { symbol: Symbol, path: PathBuf },
    #[error("template {template} uses unknown placeholder `{name}`")]
    UnknownPlaceholder { template: String, name: String },
}

/// Where template files come from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TemplateSource {
    /// The templates compiled into the binary.
    #[default]
    Builtin,
    Dir(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub template_id: String,
    /// Placeholder name to interpolated value, for every placeholder used.
    pub substitutions: BTreeMap<String, String>,
}

macro_rules! builtin {
    ($($sym:ident => $file:literal),* $(,)?) => {
        fn builtin_template(symbol: Symbol) -> &'static str {
            match symbol {
                $(Symbol::$sym => include_str!(concat!("../../../templates/", $file, ".prompt")),)*
            }
        }
    };
}

builtin! {
    Ideation => "Ideation",
    TheoryCreation => "TheoryCreation",
    SeedGeneration => "SeedGeneration",
    SeedUpgrade => "SeedUpgrade",
    PaperStrengthening => "PaperStrengthening",
    ReadmeVerification => "READMEVerification",
    BenchmarkTightening => "BenchmarkTightening",
    GroundingCreation => "GroundingCreation",
    SkepticalAudit => "SkepticalAudit",
    PaperRewrite => "PaperRewrite",
    ClaimCleanup => "ClaimCleanup",
    PortfolioExpansion => "PortfolioExpansion",
    FinalGroundingAudit => "FinalGroundingAudit",
    Critique => "Critique",
    ResponseToCritique => "ResponseToCritique",
    AcademicPaperPolish => "AcademicPaperPolish",
    BenchmarkSearch => "BenchmarkSearch",
}

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\{\{\s*([A-Za-z0-9_]+)\s*\}\}").expect("valid regex"));

pub const PLACEHOLDERS: [&str; 17] = [
    "step",
    "symbol",
    "phase",
    "repo_count",
    "repo_names",
    "batch_target",
    "total_loc",
    "test_file_count",
    "paper_words",
    "readme_words",
    "benchmark_count",
    "grounding_ratio",
    "test_pass_ratio",
    "theory_present",
    "thesis",
    "utility_hypothesis",
    "open_obligations",
];

fn placeholder_value(name: &str, symbol: Symbol, w: &WorkspaceSummary, batch_target: u64) -> Option<String> {
    let or_none = |s: &str| {
        if s.is_empty() {
            "(none)".to_string()
        } else {
            s.to_string()
        }
    };
    Some(match name {
        "step" => w.snapshot_step.to_string(),
        "symbol" => symbol.id().to_string(),
        "phase" => format!("{:?}", symbol.phase()),
        "repo_count" => w.repo_forest.repos.len().to_string(),
        "repo_names" => or_none(
            &w.repo_forest
                .repos
                .iter()
                .map(|r| r.name.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        ),
        "batch_target" => batch_target.to_string(),
        "total_loc" => w.repo_forest.total_loc().to_string(),
        "test_file_count" => w.repo_forest.test_file_count().to_string(),
        "paper_words" => w.public_projection.paper_words.to_string(),
        "readme_words" => w.public_projection.readme_words.to_string(),
        "benchmark_count" => w.evidence.benchmark_count().to_string(),
        "grounding_ratio" => format!("{:.3}", w.evidence.grounded_claim_ratio),
        "test_pass_ratio" => format!("{:.3}", w.evidence.test_pass_ratio),
        "theory_present" => w.theory.present.to_string(),
        "thesis" => or_none(w.theory.thesis.as_deref().unwrap_or("")),
        "utility_hypothesis" => or_none(&w.utility_hypothesis.text),
        "open_obligations" => {
            if w.open_obligations.is_empty() {
                "(none)".to_string()
            } else {
                w.open_obligations
                    .iter()
                    .map(|o| format!("- {o}"))
                    .collect::<Vec<_>>()
                    .join("\n")
            }
        }
        _ => return None,
    })
}

pub fn load_template(symbol: Symbol, source: &TemplateSource) -> Result<String, RenderError> {
    match source {
        TemplateSource::Builtin => Ok(builtin_template(symbol).to_string()),
        TemplateSource::Dir(dir) => {
            let path = dir.join(format!("{}.prompt", symbol.id()));
            fs::read_to_string(&path).map_err(|_| RenderError::MissingTemplate { symbol, path })
        }
    }
}

/// Substitute every placeholder in `template`.
pub fn render_text(
    template: &str,
    template_id: &str,
    symbol: Symbol,
    w: &WorkspaceSummary,
    batch_target: u64,
) -> Result<PromptText, RenderError> {
    let mut substitutions = BTreeMap::new();
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for caps in PLACEHOLDER.captures_iter(template) {
        let whole = caps.get(0).expect("match");
        let name = &caps[1];
        let value =
            placeholder_value(name, symbol, w, batch_target).ok_or_else(|| RenderError::UnknownPlaceholder {
                template: template_id.to_string(),
                name: name.to_string(),
            })?;
        out.push_str(&template[last..whole.start()]);
        out.push_str(&value);
        substitutions.insert(name.to_string(), value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(PromptText {
        text: out,
        template_id: template_id.to_string(),
        substitutions,
    })
}

pub fn render_prompt(
    symbol: Symbol,
    w: &WorkspaceSummary,
    source: &TemplateSource,
    batch_target: u64,
) -> Result<PromptText, RenderError> {
    let template = load_template(symbol, source)?;
    render_text(&template, symbol.id(), symbol, w, batch_target)
}

/// Load and dry-render every template so bad placeholders surface at
/// configuration time.
pub fn validate_templates(source: &TemplateSource) -> Result<(), RenderError> {
    let w = WorkspaceSummary::default();
    for sym in Symbol::ALL {
        render_prompt(sym, &w, source, 1)?;
    }
    Ok(())
}

pub fn template_dir(path: &Path) -> TemplateSource {
    TemplateSource::Dir(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workspace::{RepoInfo, RepoSurface};

    fn one_repo() -> WorkspaceSummary {
        WorkspaceSummary {
            repo_forest: RepoSurface {
                repos: vec![RepoInfo {
                    name: "alpha".into(),
                    ..RepoInfo::default()
                }],
            },
            ..WorkspaceSummary::default()
        }
    }

    #[test]
    fn no_placeholders_is_identity() {
        let t = "Audit everything.\n";
        let p = render_text(t, "x", Symbol::SkepticalAudit, &one_repo(), 1).unwrap();
        assert_eq!(p.text, t);
        assert!(p.substitutions.is_empty());
    }

    #[test]
    fn direct_substitution() {
        let p = render_text("{{repo_count}} repos", "x", Symbol::SeedUpgrade, &one_repo(), 1).unwrap();
        assert_eq!(p.text, "1 repos");
        assert_eq!(p.substitutions["repo_count"], "1");
    }

    #[test]
    fn unknown_placeholder_is_named() {
        let err = render_text("a {{nonexistent}} b", "x", Symbol::Critique, &one_repo(), 1).unwrap_err();
        match err {
            RenderError::UnknownPlaceholder { name, .. } => assert_eq!(name, "nonexistent"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn builtin_templates_all_render() {
        validate_templates(&TemplateSource::Builtin).unwrap();
        for name in PLACEHOLDERS {
            assert!(
                placeholder_value(name, Symbol::Ideation, &one_repo(), 1).is_some(),
                "{name}"
            );
        }
    }

    #[test]
    fn missing_template_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = render_prompt(Symbol::Critique, &one_repo(), &template_dir(dir.path()), 1).unwrap_err();
        assert!(matches!(err, RenderError::MissingTemplate { .. }));
    }

    #[test]
    fn rendering_is_deterministic() {
        let w = one_repo();
        let a = render_prompt(Symbol::SeedGeneration, &w, &TemplateSource::Builtin, 10).unwrap();
        let b = render_prompt(Symbol::SeedGeneration, &w, &TemplateSource::Builtin, 10).unwrap();
        assert_eq!(a, b);
        assert!(a.text.contains("Target repository count:\n10"));
    }
}
