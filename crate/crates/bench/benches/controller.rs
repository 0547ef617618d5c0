use std::path::{Path, PathBuf};

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use cesm_core::config::{RunConfig, Settings};
use cesm_core::kernel::{admissible, all_scores, select, KernelConfig, Mode};
use cesm_core::ledger::{audit_claims, load_workspace_ledger, AuditOptions};
use cesm_core::run::{run, RunOptions};
use cesm_core::{extract_features, summarize_workspace, DeficitConfig, ObligationVector, Symbol};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn golden(dir: &Path) -> Settings {
    let (mut raw, base) = RunConfig::load(&fixtures().join("golden.toml")).unwrap();
    raw.run.workspace = dir.join("ws");
    Settings::resolve(raw, &base).unwrap()
}

fn kernel(c: &mut Criterion) {
    let cfg = KernelConfig::default();
    let w = summarize_workspace(&fixtures().join("ws-minimal"), 0).unwrap();
    let o = ObligationVector::from_array([0.5, 1.0, 0.25, 0.0, 1.0]);
    let feat = extract_features(&w, &o, &DeficitConfig::default());
    let history = [
        Symbol::GroundingCreation,
        Symbol::SkepticalAudit,
        Symbol::ReadmeVerification,
    ];

    c.bench_function("score all symbols", |b| {
        b.iter(|| all_scores(black_box(&feat), &history, &cfg.weights, cfg.window))
    });
    c.bench_function("admissible and select", |b| {
        let scores = all_scores(&feat, &history, &cfg.weights, cfg.window);
        b.iter(|| {
            let adm = admissible(Mode::Harden, &[], black_box(30), feat.code_deficit(), &cfg);
            select(&adm, &scores)
        })
    });
}

fn surfaces(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let s = golden(dir.path());
    run(
        &s,
        RunOptions {
            persist: false,
            ..RunOptions::default()
        },
    )
    .unwrap();
    c.bench_function("summarize golden workspace", |b| {
        b.iter(|| summarize_workspace(black_box(&s.workspace), 40).unwrap())
    });
    let root = fixtures().join("ledger-orphan");
    c.bench_function("audit orphan ledger", |b| {
        b.iter(|| {
            let mut ledger = load_workspace_ledger(&root).unwrap();
            audit_claims(&mut ledger, &root, &AuditOptions::default())
        })
    });
}

fn golden_run(c: &mut Criterion) {
    let mut g = c.benchmark_group("run");
    g.sample_size(10);
    g.bench_function("golden 40 steps", |b| {
        b.iter(|| {
            let dir = tempfile::tempdir().unwrap();
            let s = golden(dir.path());
            run(
                &s,
                RunOptions {
                    persist: false,
                    ..RunOptions::default()
                },
            )
            .unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, kernel, surfaces, golden_run);
criterion_main!(benches);
