//! `daytoll` — solve, verify, simulate, and sweep the day-to-day congestion
//! pricing control problem from a TOML config.

mod config;
mod experiment;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::ExperimentKind;

#[derive(Parser)]
#[command(
    name = "daytoll",
    about = "Day-to-day congestion pricing: average-cost tolling policies over stochastic demand",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the experiment config (TOML).
    config: PathBuf,
    /// Output directory (overrides the config's `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulation / run seed (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweep points.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the optimal tolling policy and write policy/summary CSVs.
    Solve(CommonArgs),
    /// Run the stability checkers and write verify.txt.
    Verify(CommonArgs),
    /// Solve, then simulate the optimal policy; writes the running-average trace.
    Simulate(CommonArgs),
    /// Run the sweep named by the config's `kind` (sweep-theta, sweep-eta, ...).
    Sweep(CommonArgs),
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (args, kind) = match &cli.command {
        Command::Solve(a) => (a, Some(ExperimentKind::Solve)),
        Command::Verify(a) => (a, Some(ExperimentKind::Verify)),
        Command::Simulate(a) => (a, Some(ExperimentKind::Simulate)),
        // The sweep flavor comes from the config file itself.
        Command::Sweep(a) => (a, None),
    };
    let cfg = config::parse_config(&args.config, kind, args.seed, args.out.clone())?;
    if matches!(cli.command, Command::Sweep(_)) && !cfg.kind.is_sweep() {
        anyhow::bail!(
            "the sweep subcommand needs a sweep-* kind in the config, found '{}'",
            cfg.kind
        );
    }
    experiment::run_experiment(&cfg, args.threads)?;
    println!("{} run complete: outputs in {}", cfg.kind, cfg.out.display());
    Ok(())
}
