use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use epi_smc::commands::{self, RunContext};
use epi_smc::config::ExperimentConfig;
use epi_smc::csvout::{config_hash, git_revision};

/// Particle filters for individual-based epidemic models.
#[derive(Parser)]
#[command(name = "epi-smc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset and write scenario, counts, rates, and reports.
    Simulate(CommonArgs),
    /// Run one particle filter and dump its output and ESS trace.
    Filter(CommonArgs),
    /// ESS traces per method and replicate.
    Ess(CommonArgs),
    /// Log-likelihood standard deviation table over replicates.
    Stddev(CommonArgs),
    /// Log-likelihood surface over a two-component coefficient grid.
    Grid(CommonArgs),
    /// Sensitivity of std and ESS to the assumed reporting rate.
    Qsens(CommonArgs),
    /// Particle-marginal parameter inference for the SIS layout.
    Pmmh(CommonArgs),
    /// Filter estimates against the exact likelihood on a small population.
    ExactCheck(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out_dir`, then `.`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full-scale experiment sizes instead of the fast desk-scale defaults.
    #[arg(long)]
    paper_scale: bool,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
}

fn run(command: &Command) -> anyhow::Result<Vec<PathBuf>> {
    let (args, runner): (&CommonArgs, fn(&RunContext) -> _) = match command {
        Command::Simulate(a) => (a, commands::cmd_simulate),
        Command::Filter(a) => (a, commands::cmd_filter),
        Command::Ess(a) => (a, commands::cmd_ess),
        Command::Stddev(a) => (a, commands::cmd_stddev),
        Command::Grid(a) => (a, commands::cmd_grid),
        Command::Qsens(a) => (a, commands::cmd_qsens),
        Command::Pmmh(a) => (a, commands::cmd_pmmh),
        Command::ExactCheck(a) => (a, commands::cmd_exact_check),
    };

    if let Some(workers) = args.workers {
        rayon::ThreadPoolBuilder::new().num_threads(workers).build_global()?;
    }

    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;

    let provenance = format!(
        "config={:016x} seed={} rev={}",
        config_hash(&config.to_json()),
        config.seed,
        git_revision()
    );
    let ctx = RunContext { config, paper_scale: args.paper_scale, out_dir, provenance };
    Ok(runner(&ctx)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(paths) => {
            for path in paths {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
