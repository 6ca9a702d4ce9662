use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use brickwall::config::{parse_config, ExperimentConfig};
use brickwall::experiment::{
    plan_table, run_compare, run_covariance, run_sample, run_sweep, write_rows, ResultRow,
    RunError, DEFAULT_SWEEP_STRIDES,
};

/// Tiled diffusion sampling simulator: brick-to-wall denoising against
/// concatenation, sliding-window averaging and untiled baselines.
#[derive(Debug, Parser)]
#[command(name = "brickwall", version)]
struct Cli {
    /// Configuration file (`key = value` lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path; stdout when omitted
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Emit one JSON object per row instead of CSV
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads, overriding the configuration
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Seed, overriding the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the offset and segments of every sampler step
    Plan,
    /// Exact covariance propagation (eta = 0 only)
    Covariance,
    /// Monte Carlo covariance estimate
    Sample,
    /// One brick row per stride
    Sweep {
        /// Comma-separated strides
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWEEP_STRIDES)]
        strides: Vec<usize>,
    },
    /// One row per strategy: untiled, concat, sliding window, brick
    Compare,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, RunError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                RunError::Config(brickwall::config::ConfigError::Validation(format!(
                    "cannot read {}: {e}",
                    path.display()
                )))
            })?;
            parse_config(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn output(cli: &Cli) -> Result<Box<dyn Write>, RunError> {
    Ok(match &cli.out {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(cli: &Cli, rows: &[ResultRow]) -> Result<(), RunError> {
    write_rows(rows, output(cli)?, cli.json)
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Plan => {
            let mut out = output(cli)?;
            out.write_all(plan_table(&config)?.as_bytes())?;
            out.flush()?;
            Ok(())
        }
        Command::Covariance => emit(cli, &[run_covariance(&config)?]),
        Command::Sample => emit(cli, &[run_sample(&config)?]),
        Command::Sweep { strides } => emit(cli, &run_sweep(&config, strides)?),
        Command::Compare => emit(cli, &run_compare(&config)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
