#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cesm_core::config::{RunConfig, Settings, Switch};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Settings for a bundled scenario with its workspace under `dir`.
pub fn scenario_settings(dir: &Path, script: &str, budget: Option<u64>, off: &[Switch]) -> Settings {
    let (mut raw, base) = RunConfig::load(&fixtures().join("golden.toml")).unwrap();
    raw.run.workspace = dir.join("ws");
    raw.executor.script = Some(PathBuf::from(format!("scripts/{script}.json")));
    if let Some(b) = budget {
        raw.run.budget = b;
    }
    raw.ablation.off = off.to_vec();
    Settings::resolve(raw, &base).unwrap()
}

pub fn golden_settings(dir: &Path) -> Settings {
    scenario_settings(dir, "golden", None, &[])
}
