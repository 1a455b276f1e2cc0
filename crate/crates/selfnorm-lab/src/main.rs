//! `selfnorm-lab`: Monte Carlo experiments on self-normalized statistics.
//!
//! Every subcommand reads one JSON configuration file, writes CSV (and
//! optionally SVG) reports into the output directory, and appends a JSON
//! line to `run.log` there.  Exit codes: 0 success, 2 configuration error,
//! 3 runtime or degeneracy error, 4 assertion failure under `--assert`.

use clap::{Args, Parser, Subcommand};
use selfnorm_lab::config::{self, Subcommand as Cmd};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "selfnorm-lab",
    about = "Monte Carlo laboratory for tail asymptotics of self-normalized statistics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Base RNG seed; overrides the configuration's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; falls back to SELFNORM_LAB_WORKERS, then the
    /// configuration's `workers`, then all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Enforce the configuration's `assert` block (exit 4 on violation).
    #[arg(long, default_value_t = false)]
    assert: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a tail-probability curve with normal-tail ratios and the
    /// theoretical envelope, and fit the envelope constant.
    Tail(RunArgs),
    /// Quotient of log tail probabilities against the normal tail.
    Logratio(RunArgs),
    /// Moderate-deviation rate diagnostic along a ray.
    Mdp(RunArgs),
    /// Kolmogorov distance of the statistic's empirical law to the normal.
    Ks(RunArgs),
    /// Concentration probe for the predictable variance.
    #[command(name = "probe-variance")]
    ProbeVariance(RunArgs),
    /// Two-sided tail of the standardized log population size.
    #[command(name = "lnz-tail")]
    LnzTail(RunArgs),
    /// Simulate one branching-process trajectory to CSV.
    #[command(name = "bpre-sim")]
    BpreSim(RunArgs),
    /// Confidence interval for the offspring mean from a trajectory CSV.
    #[command(name = "bpre-ci")]
    BpreCi(RunArgs),
    /// Empirical coverage of offspring-mean confidence intervals.
    Coverage(RunArgs),
}

fn split(command: Command) -> (Cmd, RunArgs) {
    match command {
        Command::Tail(a) => (Cmd::Tail, a),
        Command::Logratio(a) => (Cmd::Logratio, a),
        Command::Mdp(a) => (Cmd::Mdp, a),
        Command::Ks(a) => (Cmd::Ks, a),
        Command::ProbeVariance(a) => (Cmd::ProbeVariance, a),
        Command::LnzTail(a) => (Cmd::LnzTail, a),
        Command::BpreSim(a) => (Cmd::BpreSim, a),
        Command::BpreCi(a) => (Cmd::BpreCi, a),
        Command::Coverage(a) => (Cmd::Coverage, a),
    }
}

fn workers_from_env() -> Option<usize> {
    let raw = std::env::var("SELFNORM_LAB_WORKERS").ok()?;
    match raw.trim().parse::<usize>() {
        Ok(n) if n >= 1 => Some(n),
        _ => {
            eprintln!("warning: ignoring invalid SELFNORM_LAB_WORKERS value {raw:?}");
            None
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let (subcommand, args) = split(cli.command);
    let workers = args.workers.or_else(workers_from_env);
    match config::run_from_file(
        &args.config,
        subcommand,
        args.out,
        args.seed,
        workers,
        args.assert,
    ) {
        Ok(outputs) => {
            for file in outputs {
                println!("wrote {file}");
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
