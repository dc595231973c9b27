use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsb_core::experiment::{self, Cell, GridOutcome};
use fedsb_core::{parse_config, selftest, FedError, RunConfig};

#[derive(Parser)]
#[command(name = "fedsb", version, about = "Federated domain generalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configuration as written (leave-one-domain-out).
    Run(GridArgs),
    /// Smoothing x budget ablation grid.
    Ablation(GridArgs),
    /// Epsilon and budget sensitivity sweeps.
    Sensitivity(GridArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ten times fewer rounds and samples.
    #[arg(long)]
    quick: bool,
}

fn load(args: &GridArgs) -> Result<RunConfig, FedError> {
    let bytes = std::fs::read(&args.config).map_err(|e| FedError::Io {
        path: args.config.clone(),
        source: e,
    })?;
    let mut cfg = parse_config(&bytes)?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if args.quick {
        cfg = cfg.quick();
    }
    Ok(cfg)
}

fn run_grid(args: &GridArgs, stem: &str, cells: fn(&RunConfig) -> Vec<Cell>) -> Result<(), FedError> {
    let cfg = load(args)?;
    let cells = cells(&cfg);
    let outcome: GridOutcome = experiment::run_grid(&cfg, &cells)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let files = experiment::write_outcome(&cfg.out_dir, stem, &outcome)?;
    print!("{}", experiment::summary_table(&outcome.summary));
    for p in [&files.csv, &files.json, &files.table] {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn single(cfg: &RunConfig) -> Vec<Cell> {
    vec![experiment::single_cell(cfg)]
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run_grid(a, "metrics", single),
        Command::Ablation(a) => run_grid(a, "ablation", experiment::ablation_cells),
        Command::Sensitivity(a) => run_grid(a, "sensitivity", experiment::sensitivity_cells),
        Command::Selftest => {
            let checks = selftest::run_all();
            for c in &checks {
                println!("[{}] {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            if checks.iter().all(|c| c.passed) {
                Ok(())
            } else {
                return ExitCode::FAILURE;
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
