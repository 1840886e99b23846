use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use rsma_ee::experiment::{run_experiment, ExperimentConfig};
use rsma_ee::optimizer::OptimizerOptions;
use rsma_ee::scenario::SystemConfig;

/// Energy-efficient RS-CMD beamforming with scheduled private-message removal.
#[derive(Debug, Parser)]
#[command(name = "rsma-ee", version)]
struct Args {
    /// System configuration (JSON); missing fields take the default values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the first drop; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of independent channel drops.
    #[arg(long, default_value_t = 1)]
    drops: usize,
    /// Output directory for the CSV files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write per-drop scenario, grouping, PMR and iteration logs.
    #[arg(long)]
    debug: bool,
}

fn run(args: Args) -> rsma_ee::Result<()> {
    let mut system = match &args.config {
        Some(path) => SystemConfig::from_json_file(path)?,
        None => SystemConfig::default(),
    };
    if let Some(seed) = args.seed {
        system.seed = seed;
    }
    let config = ExperimentConfig {
        system,
        drops: args.drops,
        output_dir: args.out,
        emit_debug: args.debug,
        optimizer: OptimizerOptions::default(),
    };
    let report = run_experiment(&config)?;

    let feasible = report.summaries.iter().filter(|s| s.feasible).count();
    println!("drops: {} ({} feasible)", report.summaries.len(), feasible);
    for r in report.records.iter().filter(|r| r.failure.is_some()) {
        println!("drop {} (seed {}): {}", r.drop, r.seed, r.failure.as_deref().unwrap_or(""));
    }
    if let Some(g) = report.median_rel_gain_pct() {
        println!("median relative peak EE gain: {g:.3} %");
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
