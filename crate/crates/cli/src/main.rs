//! rabiqpt: config-driven simulator runs with CSV/JSON output.

mod commands;
mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

/// Failure classes mapped onto process exit codes.
#[derive(Debug)]
pub enum Failure {
    /// Exit 2: bad configuration or violated precondition.
    Config(String),
    /// Exit 3: numerical failure during the run.
    Numerics(String),
    /// Exit 4: file system or serialization trouble.
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerics(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerics(m) | Failure::Io(m) => m,
        }
    }
}

impl From<rabiqpt_core::Error> for Failure {
    fn from(e: rabiqpt_core::Error) -> Self {
        use rabiqpt_core::Error::*;
        match e {
            InvalidParameter(_) | InsufficientData(_) => Failure::Config(e.to_string()),
            _ => Failure::Numerics(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "rabiqpt",
    version,
    about = "Quantum Rabi model quench, tomography and scaling runs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ramp the sideband drive across the critical point and record the
    /// trajectory as CSV.
    Quench(RunArgs),
    /// Synthesize, fit or cutoff-select blue-sideband signals.
    Sideband(RunArgs),
    /// Finite-ratio scaling tables and fitted slopes.
    Scaling(RunArgs),
    /// Ratio uncertainty from detuning perturbations.
    #[command(name = "error-budget")]
    ErrorBudget(RunArgs),
    /// Exact ground-state observables over a coupling grid.
    #[command(name = "ground-state")]
    GroundState(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for grid sweeps.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Echo the parsed configuration to stdout and exit.
    #[arg(long)]
    dump_config: bool,
}

fn load(args: &RunArgs) -> Result<RunConfig, Failure> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::Io(format!("{}: {}", args.config.display(), e)))?;
    RunConfig::parse(&text)
}

fn run(command: &Command) -> Result<(), Failure> {
    let (args, name): (&RunArgs, &str) = match command {
        Command::Quench(a) => (a, "quench"),
        Command::Sideband(a) => (a, "sideband"),
        Command::Scaling(a) => (a, "scaling"),
        Command::ErrorBudget(a) => (a, "error-budget"),
        Command::GroundState(a) => (a, "ground-state"),
    };
    let cfg = load(args)?;
    if args.dump_config {
        let text = serde_json::to_string_pretty(&cfg)
            .map_err(|e| Failure::Io(format!("serialize: {}", e)))?;
        println!("{}", text);
        return Ok(());
    }
    if args.jobs == 0 {
        return Err(Failure::Config("--jobs must be at least 1".into()));
    }
    let seed = args.seed.unwrap_or(cfg.seed);
    log::info!("{} with {} job(s), seed {}", name, args.jobs, seed);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| Failure::Config(format!("--jobs: {}", e)))?;
    pool.install(|| match command {
        Command::Quench(_) => commands::cmd_quench(&cfg, &args.out),
        Command::Sideband(_) => commands::cmd_sideband(&cfg, &args.out, seed),
        Command::Scaling(_) => commands::cmd_scaling(&cfg, &args.out),
        Command::ErrorBudget(_) => commands::cmd_error_budget(&cfg, &args.out),
        Command::GroundState(_) => commands::cmd_ground_state(&cfg, &args.out),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("RABIQPT_LOG")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("rabiqpt: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
