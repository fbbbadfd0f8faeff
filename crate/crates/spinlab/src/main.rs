//! `spinlab`: runs simulation and fitting experiments from JSON configs.

mod config;
mod error;
mod experiments;
mod output;
mod schema;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use error::{CliError, CliResult};
use output::{RunRecord, RECORD_FILE};
use schema::Experiment;

#[derive(Debug, Parser)]
#[command(name = "spinlab", version, about = "Spin-qubit simulation and fitting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a registered model to a CSV file of x, y[, sigma] rows.
    Fit {
        model: String,
        csv: PathBuf,
        /// uniform, counts, sigma or auto.
        #[arg(long, default_value = "auto")]
        weights: String,
        /// Also write fit.csv and summary.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show an experiment's parameters with units and defaults.
    Describe { experiment: String },
    /// List the experiment names.
    List,
}

/// SPINLAB_THREADS bounds the worker pool; results do not depend on it.
fn init_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("SPINLAB_THREADS") else {
        return Ok(());
    };
    let n: usize =
        value.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
            CliError::validation(format!("SPINLAB_THREADS must be a positive integer, got {value:?}"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::validation(format!("thread pool: {e}")))
}

fn run(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> CliResult<()> {
    let cfg = ExperimentConfig::load(&config, seed)?;
    let dir = out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("spinlab-out").join(cfg.experiment.name()));
    let start = Instant::now();
    let outcome = experiments::run(&cfg)?;
    let manifest = output::write_outcome(&dir, &outcome)?;
    let record = RunRecord {
        config_hash: cfg.hash.clone(),
        toolkit_version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment.name().into(),
        seed: cfg.seed,
        parameters: cfg.params.as_json(),
        wall_clock_s: start.elapsed().as_secs_f64(),
        result: outcome.summary.clone(),
        manifest,
    };
    output::write_record(&dir, &record)?;
    print!("{}", output::pretty(&outcome.summary));
    eprintln!("wrote {}", dir.join(RECORD_FILE).display());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Run { config, seed, out } => run(config, seed, out),
        Command::Fit {
            model,
            csv,
            weights,
            out,
        } => {
            let outcome = experiments::fit_file(&model, &csv, &weights)?;
            if let Some(dir) = out {
                output::write_outcome(&dir, &outcome)?;
            }
            print!("{}", output::pretty(&outcome.summary));
            Ok(())
        }
        Command::Describe { experiment } => {
            print!("{}", schema::describe(experiment.parse()?));
            Ok(())
        }
        Command::List => {
            for e in Experiment::ALL {
                println!("{:<10} {}", e.name(), e.summary());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::validation(e.to_string().trim().to_owned());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
