use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use funglm::harness::{run, ExperimentConfig, RunMode};

/// Simulation experiments for sieve maximum likelihood in functional
/// exponential-family regression.
#[derive(Debug, Parser)]
#[command(name = "funglm", version)]
struct Cli {
    #[arg(value_enum)]
    mode: RunMode,

    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,

    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match run(&config, cli.mode, &cli.out) {
        Ok(output) => {
            for a in &output.assertions {
                println!(
                    "{} {} (value {}, bound {})",
                    if a.pass { "PASS" } else { "FAIL" },
                    a.name,
                    a.value,
                    a.bound
                );
            }
            println!("wrote {}", output.csv_path.display());
            if output.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
