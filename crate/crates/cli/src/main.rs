use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use cesm_core::ablation::{run_plan, AblationPlan};
use cesm_core::canonical::{to_canonical_string, write_atomic};
use cesm_core::config::{RunConfig, Settings};
use cesm_core::ledger::{audit_claims, load_workspace_ledger, save_ledger, AuditOptions, LEDGER_FILE};
use cesm_core::run::{replay, resume, run, ReplayParams, RunOptions, RunOutput};
use cesm_core::trace::load_trace;

/// Exit codes: 0 clean, 1 the run or audit found violations, 2 usage or I/O error.
const VIOLATIONS: u8 = 1;
const FAILURE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "cesm",
    version,
    about = "Controlled expansion state machine for research workspaces"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the controller until the budget is spent.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Stop after this many steps; resume later from the last checkpoint.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Continue a run from a checkpoint file.
    Resume {
        checkpoint: PathBuf,
        /// Config to resume under; must hash to the checkpoint's config.
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Re-derive every selection in a trace and report the first divergence.
    Replay {
        trace: PathBuf,
        /// Config whose kernel the trace was produced under (defaults otherwise).
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Grounding ledger tools.
    Ledger {
        #[command(subcommand)]
        command: LedgerCommand,
    },
    /// Run ablation specs over the mock executor and compare against control.
    Ablate {
        spec: PathBuf,
        /// Directory for ablation-report.json, ablation-table.txt and ablation.csv.
        #[arg(short, long, default_value = ".")]
        out: PathBuf,
        /// Baseline config the arms start from (defaults otherwise).
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Check every claim and every public number against grounding.json.
    Audit {
        root: PathBuf,
        /// Re-run each claim's command and compare output digests.
        #[arg(long)]
        execute: bool,
        /// Write refreshed statuses back to grounding.json.
        #[arg(long)]
        write: bool,
    },
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_env("CESM_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    print!("{}", to_canonical_string(value)?);
    Ok(())
}

fn load_settings(path: &Path) -> Result<Settings> {
    let (raw, base) = RunConfig::load(path)?;
    Ok(Settings::resolve(raw, &base)?)
}

fn finish_run(out: RunOutput) -> Result<u8> {
    print_json(&out.summary)?;
    Ok(if out.summary.ok() { 0 } else { VIOLATIONS })
}

fn execute(command: Command) -> Result<u8> {
    match command {
        Command::Run { config, stop_after } => {
            let settings = load_settings(&config)?;
            let out = run(
                &settings,
                RunOptions {
                    stop_after,
                    ..RunOptions::default()
                },
            )?;
            finish_run(out)
        }
        Command::Resume { checkpoint, config } => {
            let settings = config.as_deref().map(load_settings).transpose()?;
            let out = resume(&checkpoint, settings.as_ref(), RunOptions::default())?;
            finish_run(out)
        }
        Command::Replay { trace, config } => {
            let params = match config {
                Some(c) => ReplayParams::from(&load_settings(&c)?),
                None => ReplayParams::default(),
            };
            let records = load_trace(&trace)?;
            let report = replay(&records, &params);
            print_json(&report)?;
            Ok(if report.ok() { 0 } else { VIOLATIONS })
        }
        Command::Ledger {
            command: LedgerCommand::Audit { root, execute, write },
        } => {
            if !root.is_dir() {
                anyhow::bail!("{} is not a directory", root.display());
            }
            let mut ledger = load_workspace_ledger(&root)?;
            let opts = AuditOptions {
                run_commands: execute,
                ..AuditOptions::default()
            };
            let report = audit_claims(&mut ledger, &root, &opts);
            if write {
                save_ledger(&ledger, &root.join(LEDGER_FILE))?;
            }
            print_json(&report)?;
            Ok(if report.has_violations() { VIOLATIONS } else { 0 })
        }
        Command::Ablate { spec, out, config } => {
            let plan = AblationPlan::load(&spec)?;
            let baseline = match config {
                Some(c) => RunConfig::load(&c)?.0,
                None => RunConfig::default(),
            };
            let report = run_plan(&plan, &baseline);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_atomic(&out.join("ablation-report.json"), report.to_json().as_bytes())?;
            write_atomic(&out.join("ablation-table.txt"), report.table().as_bytes())?;
            write_atomic(&out.join("ablation.csv"), report.csv().as_bytes())?;
            print!("{}", report.table());
            Ok(if report.all_hold() { 0 } else { VIOLATIONS })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(FAILURE)
        }
    }
}
