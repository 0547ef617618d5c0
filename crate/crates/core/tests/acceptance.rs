//! Acceptance checks. Prints one PASS/FAIL line per check with its wall time
//! and exits nonzero if any check fails.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use cesm_core::ablation::{run_arm, run_plan, scenario_script, AblationPlan, AblationSpec};
use cesm_core::config::{RunConfig, Switch};
use cesm_core::kernel::{admissible, default_tail, select, AdmissibleRule, KernelConfig, Mode, WeightTable};
use cesm_core::ledger::{audit_claims, load_workspace_ledger, AuditOptions, Violation, ViolationKind};
use cesm_core::obligation::{default_lambda, pressure, pressure_bound, Hooks, ObligationVector, PushTable};
use cesm_core::run::{checkpoint_path, resume, run, trace_path, RunOptions};
use cesm_core::trace::{ends_with_tail, follow_up_violations, load_trace, TraceRecord};
use cesm_core::{Symbol, ALPHABET_SIZE, FEATURE_DIM};

use common::{fixtures, golden_settings, scenario_settings};

type Check = fn() -> Result<String, String>;

/// Frozen from an independent computation: 2^(-1/8) and 5 / (1 - 2^(-1/8)).
const LAMBDA: f64 = 0.917_004_043_204_671_2;
const BOUND_PER_ALPHA: f64 = 60.243_898_535_083_964;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn half_life() -> Result<String, String> {
    let l = default_lambda();
    ensure((l - LAMBDA).abs() < 1e-12, || format!("lambda {l} != {LAMBDA}"))?;
    ensure((l.powi(8) - 0.5).abs() < 1e-12, || format!("lambda^8 = {}", l.powi(8)))?;
    let mut o = ObligationVector::from_array([1.0, 2.0, 4.0, 8.0, 16.0]);
    for _ in 0..8 {
        o = o.decayed(l);
    }
    let want = [0.5, 1.0, 2.0, 4.0, 8.0];
    for (got, want) in o.to_array().iter().zip(want) {
        ensure((got - want).abs() < 1e-12, || {
            format!("eight decays gave {got}, want {want}")
        })?;
    }
    Ok(format!("lambda = {l}"))
}

fn pressure_stays_bounded() -> Result<String, String> {
    let table = PushTable::default();
    let lambda = default_lambda();
    let alpha_max = table.alpha_max();
    let bound = pressure_bound(5, alpha_max, lambda).map_err(|e| e.to_string())?;
    ensure((bound - BOUND_PER_ALPHA * alpha_max).abs() < 1e-9, || {
        format!("bound {bound} != {BOUND_PER_ALPHA} * {alpha_max}")
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let mut o = ObligationVector::ZERO;
        for _ in 0..500 {
            let symbol = if rng.gen_bool(0.8) {
                Some(Symbol::ALL[rng.gen_range(0..ALPHABET_SIZE)])
            } else {
                None
            };
            let hooks = Hooks {
                paper: rng.gen(),
                readme: rng.gen(),
            };
            o = o.decayed(lambda).plus(&table.step_push(symbol, hooks));
            let p = pressure(&o);
            ensure(o.is_nonnegative(), || format!("negative obligations {o:?}"))?;
            ensure(p <= bound + 1e-9, || format!("pressure {p} exceeds {bound}"))?;
            worst = worst.max(p);
        }
    }
    // Saturating every axis every step approaches the bound from below.
    let mut o = ObligationVector::ZERO;
    for _ in 0..2_000 {
        o = o.decayed(lambda).plus(&[alpha_max; 5]);
    }
    ensure(pressure(&o) <= bound + 1e-9, || {
        format!("saturated pressure {}", pressure(&o))
    })?;
    Ok(format!(
        "bound {bound:.6}, worst random {worst:.3}, saturated {:.6}",
        pressure(&o)
    ))
}

fn fabrication_depth() -> Result<String, String> {
    let text = fs::read_to_string(fixtures().join("fabrication-depths.json")).map_err(|e| e.to_string())?;
    let want: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let script = scenario_script("fabrication").map_err(|e| e.to_string())?;
    let budget = want["budget"].as_u64();
    let baseline = RunConfig::default();
    let on = run_arm(&baseline, &script, budget, &[]).map_err(|e| e.to_string())?;
    let off = run_arm(&baseline, &script, budget, &[Switch::Trigger]).map_err(|e| e.to_string())?;
    let (d_on, d_off) = (on.persistence_depth, off.persistence_depth);
    ensure(d_on <= 1, || format!("trigger on: depth {d_on} > 1"))?;
    ensure(d_off >= 2, || format!("trigger off: depth {d_off} < 2"))?;
    ensure(
        Some(d_on) == want["depth"]["trigger_on"].as_u64() && Some(d_off) == want["depth"]["trigger_off"].as_u64(),
        || format!("depths ({d_on}, {d_off}) differ from the hand trace {}", want["depth"]),
    )?;
    Ok(format!("depth on {d_on}, off {d_off}"))
}

fn random_weights(rng: &mut ChaCha8Rng) -> WeightTable {
    let mut w = WeightTable::zero();
    w.rho = rng.gen_range(0.0..2.0);
    for row in w.rows.iter_mut() {
        for x in row.iter_mut().take(FEATURE_DIM) {
            *x = rng.gen_range(-2.0..2.0);
        }
    }
    for b in w.bias.iter_mut() {
        *b = rng.gen_range(-1.0..1.0);
    }
    w
}

fn tail_always_completes() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tail = default_tail();
    let n = tail.len() as u64;
    let mut runs = 0;
    for i in 0..20 {
        let weights = random_weights(&mut rng);
        for budget in [n, n + 1, n + 2, n + 3, rng.gen_range(n + 4..=40)] {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let mut s = scenario_settings(dir.path(), "golden", Some(budget), &[]);
            s.kernel.weights = weights.clone();
            s.git.commit = false;
            let out = run(
                &s,
                RunOptions {
                    persist: false,
                    ..RunOptions::default()
                },
            )
            .map_err(|e| e.to_string())?;
            ensure(out.trace.len() as u64 == budget, || {
                format!("table {i}: {} steps for budget {budget}", out.trace.len())
            })?;
            ensure(ends_with_tail(&out.trace, &tail), || {
                let last: Vec<_> = out.trace[out.trace.len() - tail.len()..]
                    .iter()
                    .map(|r| r.selected)
                    .collect();
                format!("table {i}, budget {budget}: ended with {last:?}")
            })?;
            runs += 1;
        }
    }
    Ok(format!("20 weight tables, {runs} runs"))
}

fn fixture_traces() -> Result<Vec<(String, Vec<TraceRecord>)>, String> {
    let mut out = vec![(
        "trace-golden.json".to_string(),
        load_trace(&fixtures().join("trace-golden.json")).map_err(|e| e.to_string())?,
    )];
    let arms: [(&str, Option<u64>, &[Switch]); 5] = [
        ("golden", None, &[]),
        ("fabrication", Some(30), &[]),
        ("fabrication", Some(30), &[Switch::Trigger]),
        ("long", Some(240), &[]),
        ("long", Some(240), &[Switch::Decay]),
    ];
    for (script, budget, off) in arms {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let s = scenario_settings(dir.path(), script, budget, off);
        let r = run(
            &s,
            RunOptions {
                persist: false,
                ..RunOptions::default()
            },
        )
        .map_err(|e| e.to_string())?;
        out.push((format!("{script} off={off:?}"), r.trace));
    }
    Ok(out)
}

fn follow_up_law() -> Result<String, String> {
    let mut expansive = 0;
    for (name, trace) in fixture_traces()? {
        let v = follow_up_violations(&trace);
        ensure(v.is_empty(), || format!("{name}: {v:?}"))?;
        expansive += trace.iter().filter(|r| r.executed_expansive()).count();
    }
    ensure(expansive > 0, || "no executed expansive step in any trace".into())?;
    Ok(format!("6 traces, {expansive} executed expansions"))
}

fn golden_and_resume() -> Result<String, String> {
    let frozen = fs::read(fixtures().join("trace-golden.json")).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = golden_settings(dir.path());
    run(&s, RunOptions::default()).map_err(|e| e.to_string())?;
    let bytes = fs::read(trace_path(&s)).map_err(|e| e.to_string())?;
    ensure(bytes == frozen, || {
        "golden trace differs from the frozen fixture".into()
    })?;
    for k in 1..s.budget {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let s = golden_settings(dir.path());
        let opts = RunOptions {
            stop_after: Some(k),
            ..RunOptions::default()
        };
        run(&s, opts).map_err(|e| e.to_string())?;
        resume(&checkpoint_path(&s, k), Some(&s), RunOptions::default()).map_err(|e| format!("resume at {k}: {e}"))?;
        let bytes = fs::read(trace_path(&s)).map_err(|e| e.to_string())?;
        ensure(bytes == frozen, || {
            format!("resume after step {k} diverges from the golden trace")
        })?;
    }
    Ok(format!(
        "{} bytes, resumed after each of steps 1..{}",
        frozen.len(),
        s.budget - 1
    ))
}

fn ablation_signatures() -> Result<String, String> {
    let mut plan = AblationPlan::all();
    for spec in plan.ablations.iter_mut() {
        *spec = AblationSpec {
            repetitions: 2,
            ..spec.clone()
        };
    }
    let report = run_plan(&plan, &RunConfig::default());
    ensure(report.failures.is_empty(), || format!("{:?}", report.failures))?;
    ensure(report.results.len() == 6, || {
        format!("{} results", report.results.len())
    })?;
    for r in &report.results {
        ensure(r.signature.holds, || {
            format!(
                "{}: {} ablated {:?} control {:?}",
                r.switch.name(),
                r.signature.prediction,
                r.ablated,
                r.control
            )
        })?;
        ensure(r.deterministic, || format!("{}: repetitions differ", r.switch.name()))?;
    }
    let names: Vec<_> = report.results.iter().map(|r| r.switch.name()).collect();
    Ok(format!("{} hold, deterministic over 2 repetitions", names.join(", ")))
}

fn violation_key(v: &Violation) -> (ViolationKind, Option<String>, String, Option<usize>) {
    (v.kind, v.claim_id.clone(), v.file.clone(), v.line)
}

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    for entry in walkdir::WalkDir::new(from) {
        let entry = entry?;
        let rel = entry.path().strip_prefix(from).expect("under root");
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&dest)?;
        } else {
            fs::copy(entry.path(), &dest)?;
        }
    }
    Ok(())
}

fn orphan_audit() -> Result<String, String> {
    let text = fs::read_to_string(fixtures().join("ledger-orphan.manifest.json")).map_err(|e| e.to_string())?;
    let manifest: Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let mut want: Vec<_> = manifest["violations"]
        .as_array()
        .ok_or("manifest has no violations")?
        .iter()
        .map(|v| {
            let kind = serde_json::from_value(v["kind"].clone()).expect("violation kind");
            let id = v["claim_id"].as_str().map(str::to_string);
            let file = v["file"].as_str().unwrap_or_default().to_string();
            (kind, id, file, v["line"].as_u64().map(|l| l as usize))
        })
        .collect();
    want.sort();

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    copy_dir(&fixtures().join("ledger-orphan"), dir.path()).map_err(|e| e.to_string())?;
    let root = dir.path();
    let mut ledger = load_workspace_ledger(root).map_err(|e| e.to_string())?;
    for run_commands in [false, true] {
        let opts = AuditOptions {
            run_commands,
            ..AuditOptions::default()
        };
        let first = audit_claims(&mut ledger, root, &opts);
        let mut got: Vec<_> = first.violations.iter().map(violation_key).collect();
        got.sort();
        ensure(got == want, || {
            format!("execute={run_commands}: got {got:?}, want {want:?}")
        })?;
        ensure(
            Some(first.public_literals as u64) == manifest["public_literals"].as_u64(),
            || format!("public literals {}", first.public_literals),
        )?;
        let orphan = first.violations.iter().find(|v| v.kind == ViolationKind::Ungrounded);
        ensure(orphan.and_then(|v| v.literal.as_deref()) == Some("0.99"), || {
            format!("orphan {orphan:?}")
        })?;
        let before = ledger.clone();
        let second = audit_claims(&mut ledger, root, &opts);
        ensure(second == first && ledger == before, || {
            format!("execute={run_commands}: second audit differs")
        })?;
    }
    Ok(format!("{} planted violations, audit idempotent", want.len()))
}

fn kernel_algebra() -> Result<String, String> {
    let cfg = KernelConfig::default();
    let tail_len = cfg.tail_len();
    let modes = [Mode::Seed, Mode::Generate, Mode::Harden, Mode::Tail];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut forced, mut tails, mut ties) = (0, 0, 0);
    for _ in 0..5_000 {
        let mode = modes[rng.gen_range(0..modes.len())];
        let budget = rng.gen_range(1..40u64);
        let queue: Vec<Symbol> = (0..rng.gen_range(0..3))
            .map(|_| Symbol::ALL[rng.gen_range(0..ALPHABET_SIZE)])
            .collect();
        let code_deficit = rng.gen_range(0.0..1.0);
        // Few distinct values, so ties are common.
        let mut scores = [0.0; ALPHABET_SIZE];
        for s in scores.iter_mut() {
            *s = f64::from(rng.gen_range(0..4u8));
        }
        let adm = admissible(mode, &queue, budget, code_deficit, &cfg);
        ensure(!adm.symbols.is_empty(), || "empty admissible set".into())?;
        ensure(adm.symbols.windows(2).all(|w| w[0].index() < w[1].index()), || {
            format!("not sorted: {:?}", adm.symbols)
        })?;
        if budget <= tail_len {
            tails += 1;
            let want = cfg.tail[(tail_len - budget) as usize];
            ensure(adm.rule == AdmissibleRule::Tail && adm.symbols == [want], || {
                format!("budget {budget}: {adm:?}, want tail {want:?}")
            })?;
        } else if mode != Mode::Tail && !queue.is_empty() {
            forced += 1;
            ensure(adm.rule == AdmissibleRule::Forced && adm.symbols == [queue[0]], || {
                format!("forced {queue:?}: {adm:?}")
            })?;
        }
        let pick = select(&adm, &scores);
        let best = adm
            .symbols
            .iter()
            .map(|p| scores[p.index()])
            .fold(f64::NEG_INFINITY, f64::max);
        let first_best = *adm
            .symbols
            .iter()
            .find(|p| scores[p.index()] == best)
            .expect("nonempty");
        if adm.symbols.iter().filter(|p| scores[p.index()] == best).count() > 1 {
            ties += 1;
        }
        ensure(pick == first_best, || {
            format!("select {pick:?}, want {first_best:?} from {adm:?}")
        })?;
    }
    Ok(format!("5000 states: {tails} tail, {forced} forced, {ties} ties"))
}

fn main() -> ExitCode {
    // Name, check, wall-clock limit in seconds.
    let checks: [(&str, Check, f64); 9] = [
        ("decay half-life is eight steps", half_life, 1.0),
        ("pressure stays under the bound", pressure_stays_bounded, 10.0),
        ("trigger bounds fabrication persistence", fabrication_depth, 30.0),
        ("tail completes under random weights", tail_always_completes, 60.0),
        ("expansions are followed by their follow-ups", follow_up_law, 30.0),
        ("golden trace and resume are byte-identical", golden_and_resume, 120.0),
        ("ablation signatures hold", ablation_signatures, 180.0),
        ("ledger audit finds exactly the planted violations", orphan_audit, 10.0),
        ("kernel precedence and tie-break", kernel_algebra, 30.0),
    ];
    panic::set_hook(Box::new(|_| {}));
    let total = Instant::now();
    let mut failed = 0;
    for (i, (name, check, limit)) in checks.iter().enumerate() {
        let t = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        let ms = secs * 1e3;
        let result = result.and_then(|d| {
            if secs <= *limit {
                Ok(d)
            } else {
                Err(format!("{d}; took longer than the {limit} s limit"))
            }
        });
        match result {
            Ok(detail) => println!("PASS {:>2} {name} ({ms:.1} ms): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({ms:.1} ms): {why}", i + 1);
            }
        }
    }
    println!(
        "{} passed, {failed} failed in {:.1} s",
        checks.len() - failed,
        total.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
