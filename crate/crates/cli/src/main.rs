use std::fs::{self, File};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mads_hpo::ledger::write_convergence;
use mads_hpo::run::{self, summary_text, RunSettings};
use mads_hpo::{export_convergence, RunLedger};

/// Mixed-variable MADS hyperparameter search with early stopping and
/// ranking surrogates.
#[derive(Parser)]
#[command(name = "mads-hpo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a campaign and write its ledger to --out.
    Run {
        /// Settings file of `key = value` lines, applied before the flags.
        #[arg(long, value_name = "FILE")]
        config: Option<PathBuf>,
        #[command(flatten)]
        flags: SettingFlags,
        /// Output directory.
        #[arg(long, env = "MADS_HPO_OUT")]
        out: PathBuf,
    },
    /// Continue an interrupted campaign. Flags must match the stored run.
    Resume {
        #[command(flatten)]
        flags: SettingFlags,
        /// Output directory.
        #[arg(long, env = "MADS_HPO_OUT")]
        out: PathBuf,
    },
    /// Write a best-so-far convergence table from a ledger.
    Export {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Default)]
struct SettingFlags {
    /// Starting point: p1, p2 or p3.
    #[arg(long)]
    preset: Option<String>,
    /// Starting point as a serialized configuration.
    #[arg(long, conflicts_with = "preset")]
    initial: Option<String>,
    /// Budget in full blackbox evaluations.
    #[arg(long, allow_negative_numbers = true)]
    budget: Option<i64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// none, default, last-success, scheduler, or scheduler+baseline.
    #[arg(long)]
    stop: Option<String>,
    /// none, r1, r2, r3, r4, oracle, or custom:EPOCHS:FRACTION:COST.
    #[arg(long)]
    rank: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// simulated or external.
    #[arg(long)]
    backend: Option<String>,
    /// Trainer command for the external backend, run with `sh -c`.
    #[arg(long)]
    external_cmd: Option<String>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Noise level of the simulated backend.
    #[arg(long)]
    noise: Option<f64>,
    /// Any other setting, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl SettingFlags {
    fn pairs(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("preset", self.preset.clone());
        push("initial", self.initial.clone());
        push("budget", self.budget.map(|b| b.to_string()));
        push("max_epochs", self.max_epochs.map(|v| v.to_string()));
        push("stop", self.stop.clone());
        push("rank", self.rank.clone());
        push("seed", self.seed.map(|v| v.to_string()));
        push("backend", self.backend.clone());
        push("external_cmd", self.external_cmd.clone());
        push("timeout_secs", self.timeout_secs.map(|v| v.to_string()));
        push("noise", self.noise.map(|v| v.to_string()));
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{kv}`");
            };
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = execute(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, flags, out } => {
            let mut settings = RunSettings::default();
            if let Some(path) = config {
                let text = fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                settings.apply_conf(&text)?;
            }
            // the backend key must come before its parameters
            let mut pairs = flags.pairs()?;
            pairs.sort_by_key(|(k, _)| k != "backend");
            for (k, v) in &pairs {
                settings.set(k, v)?;
            }
            let started = std::time::Instant::now();
            let report = run::run(&settings, &out)?;
            print!("{}", summary_text(&report, started.elapsed()));
        }
        Command::Resume { flags, out } => {
            let started = std::time::Instant::now();
            let mut pairs = flags.pairs()?;
            pairs.sort_by_key(|(k, _)| k != "backend");
            let report = run::resume(&out, &pairs)?;
            print!("{}", summary_text(&report, started.elapsed()));
            if report.replayed > 0 {
                eprintln!("replayed {} stored evaluations", report.replayed);
            }
        }
        Command::Export { ledger, out } => {
            let l = RunLedger::load(&ledger, None)?;
            let points = export_convergence(&l)?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            write_convergence(&points, file)?;
            eprintln!("{} rows written to {}", points.len(), out.display());
        }
    }
    Ok(())
}
