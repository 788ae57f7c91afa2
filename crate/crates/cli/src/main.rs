//! `precipgen` command-line front end.

mod commands;
mod fixture;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use precipgen::ErrorClass;

#[derive(Debug, Parser)]
#[command(name = "precipgen", version, about = "Two-stage probabilistic precipitation generation")]
pub struct Cli {
    /// JSON configuration: a pipeline config, or a world config for `synth`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world and a ready-to-run pipeline config.
    Synth(SynthArgs),
    /// Fit the precipitation transform and write the transformed reference.
    Preprocess,
    /// Run the predictor and quantile delta mapping.
    Qdm,
    /// Print the divergence wavenumber and the calibrated condition-noise index.
    CalibrateNoise(CalibrateArgs),
    /// Run the full chain and write the ensemble with its manifest.
    Sample,
    /// Score the outputs of `sample` against the reference.
    Evaluate,
    /// Summarize a run, or print the default config.
    Report(ReportArgs),
    /// Check the numerical invariants against reference oracles.
    Selftest,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_lat: Option<usize>,
    #[arg(long)]
    pub n_lon: Option<usize>,
    #[arg(long)]
    pub years: Option<usize>,
    #[arg(long)]
    pub days_per_year: Option<u32>,
    #[arg(long)]
    pub train_years: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Reference stack (stem); requires `--prediction`.
    #[arg(long, requires = "prediction", conflicts_with = "fixture")]
    pub reference: Option<PathBuf>,
    /// Prediction stack (stem) on the same grid.
    #[arg(long, requires = "reference")]
    pub prediction: Option<PathBuf>,
    /// Use the built-in fixture: a prediction with no power above zonal wavenumber 32.
    #[arg(long)]
    pub fixture: bool,
    #[arg(long)]
    pub delta_log: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Print the default pipeline config as JSON.
    #[arg(long)]
    pub print_defaults: bool,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                log::debug!("caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(e.class()))
        }
    }
}
