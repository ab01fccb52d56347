use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use dmimo_secrecy::cli::{load_config, read_csv, render_csv, report_summary, run_experiment, ExperimentKind, Overrides};

/// Secrecy-rate experiments for cooperative distributed MIMO.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form versus Monte Carlo eavesdropper rate over precoder draws.
    ApproxError(RunArgs),
    /// Per-iteration rates of the optimizer against an exhaustive baseline.
    Convergence(RunArgs),
    /// Optimizer iteration counts over random channels.
    IterationCount(RunArgs),
    /// Optimized secrecy rate against the number of nodes.
    RateVsK(RunArgs),
    /// Optimized secrecy rate against the transmit cluster radius.
    RateVsRadius(RunArgs),
    /// Summarize a table written by one of the experiments.
    Summarize {
        /// CSV file to summarize.
        table: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; built-in defaults for the experiment when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; written to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    replications: Option<usize>,
    /// Monte Carlo trials per estimate.
    #[arg(long)]
    mc_trials: Option<usize>,
    /// Outer-loop stopping threshold (nats/s/Hz).
    #[arg(long)]
    epsilon: Option<f64>,
}

fn run(kind: ExperimentKind, args: RunArgs) -> anyhow::Result<()> {
    let overrides = Overrides {
        seed: args.seed,
        replications: args.replications,
        mc_trials: args.mc_trials,
        epsilon: args.epsilon,
        out: args.out.clone(),
    };
    let spec = load_config(kind, args.config.as_deref(), &overrides)?;
    let table = run_experiment(&spec).with_context(|| format!("{kind} experiment failed"))?;
    let summary = report_summary(&table)?;
    match &args.out {
        Some(path) => {
            print!("{summary}");
            eprintln!("wrote {} rows to {}", table.rows.len(), path.display());
        }
        None => {
            print!("{}", render_csv(&table)?);
            eprint!("{summary}");
        }
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::ApproxError(a) => run(ExperimentKind::ApproxError, a),
        Command::Convergence(a) => run(ExperimentKind::Convergence, a),
        Command::IterationCount(a) => run(ExperimentKind::IterationCount, a),
        Command::RateVsK(a) => run(ExperimentKind::RateVsK, a),
        Command::RateVsRadius(a) => run(ExperimentKind::RateVsRadius, a),
        Command::Summarize { table } => {
            let table = read_csv(&table).with_context(|| format!("reading {}", table.display()))?;
            print!("{}", report_summary(&table)?);
            Ok(())
        }
    }
}
