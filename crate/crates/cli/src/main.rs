use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use qefl_cli::commands;
use qefl_cli::RunConfig;

#[derive(Parser)]
#[command(
    name = "qefl",
    version,
    about = "Evolutionary federated learning simulator"
)]
struct Cli {
    /// Flat TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `master_seed` (and seeds `gradcheck`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run client rounds on all cores. Results are identical either way.
    #[arg(long, global = true)]
    parallel: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run federated training and write metrics, privacy log and model.
    Train,
    /// Score ten mutated, fine-tuned variants of the trained model.
    ReproduceTable1,
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        draws: usize,
        /// Corrupt one gradient coordinate (negative control).
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Per-round (epsilon, delta) accounting for a training run.
    PrivacyReport {
        /// Report even when the noise std is zero.
        #[arg(long)]
        allow_unbounded: bool,
    },
    /// Load a model file and evaluate it on the configured test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let dir = cfg.output_dir.clone();
    match cli.command {
        Command::Train => {
            commands::train(&cfg, &dir, cli.parallel, &mut out)?;
        }
        Command::ReproduceTable1 => {
            commands::reproduce_table1(&cfg, &dir, cli.parallel, &mut out)?;
        }
        Command::Gradcheck {
            draws,
            inject_fault,
        } => {
            let report =
                commands::gradcheck_cmd(cli.seed.unwrap_or(0), draws, inject_fault, &mut out)?;
            out.flush()?;
            return Ok(report.passed());
        }
        Command::PrivacyReport { allow_unbounded } => {
            commands::privacy_report(&cfg, allow_unbounded, cli.parallel, &mut out)?;
        }
        Command::Eval { model } => {
            commands::eval(&cfg, &model, &mut out)?;
        }
    }
    out.flush()?;
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
