//! `lobqr` command-line pipeline: generate a synthetic stream, label it,
//! train the quantile network and baselines, combine and evaluate.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Parser, ValueEnum};

pub use config::RunConfig;
pub use error::CliError;
pub use pipeline::Pipeline;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Write a synthetic stream to stream.csv.
    Gen,
    /// Label the stream at each horizon.
    Label,
    /// Train the quantile network, AR and MLP baselines.
    Train,
    /// Write validation and test predictions for every model.
    Predict,
    /// Fit combination weights and combine test quantiles.
    Combine,
    /// Score every model and write report.json/report.csv.
    Evaluate,
    /// Every stage for every horizon.
    FullRun,
}

#[derive(Debug, Parser)]
#[command(name = "lobqr", version, about = "Limit order book quantile regression pipeline")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Sectioned key=value config file.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Global seed (run.seed); module seeds derive from it.
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Restrict to one horizon (run.horizons).
    #[arg(long, value_name = "K")]
    pub horizon: Option<usize>,
    /// Output directory (run.out_dir).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Suppress progress lines on stderr.
    #[arg(long)]
    pub quiet: bool,
}

impl Cli {
    /// The effective config: file contents with flag overrides applied.
    pub fn load_config(&self) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(&self.config).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Config(format!("config file {} not found", self.config.display())),
            _ => CliError::io(format!("reading {}", self.config.display()), e),
        })?;
        RunConfig::parse(&text)?.with_overrides(self.seed, self.horizon, self.out.clone())
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.load_config()?;
    let _lock = pipeline::RunLock::acquire(&cfg.out_dir)?;
    let mut p = Pipeline::new(cfg);
    p.verbose = !cli.quiet;
    p.write_config()?;
    let horizons = p.cfg.horizons.clone();
    match cli.command {
        Command::Gen => p.gen()?,
        Command::Label => horizons.iter().try_for_each(|&k| p.label(k))?,
        Command::Train => horizons.iter().try_for_each(|&k| p.train(k))?,
        Command::Predict => horizons.iter().try_for_each(|&k| p.predict(k))?,
        Command::Combine => horizons.iter().try_for_each(|&k| p.combine(k))?,
        Command::Evaluate => {
            p.evaluate()?;
        }
        Command::FullRun => {
            p.full_run()?;
        }
    }
    Ok(())
}
