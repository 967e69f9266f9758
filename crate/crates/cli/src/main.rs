//! `windcast`: convert weather archives, train and evaluate the forecasting
//! models, and check a run against the published results.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};
use windcast::data::Schema;
use windcast::metrics::ReportFormat;
use windcast::model::ModelKind;
use windcast::repro::ACCEPTANCE_SEEDS;

use crate::commands::EvaluateOptions;
use crate::config::{parse_list, ConfigFile, Defaults, Overrides, RunConfig, TrainOverrides};

#[derive(Parser, Debug)]
#[command(
    name = "windcast",
    version,
    about = "Multi-city wind speed forecasting with convolutional networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert an upstream weather export to the canonical CSV layout
    Convert {
        /// Upstream file (KNMI hourly export, wide CSV, or canonical CSV)
        input: PathBuf,
        /// Output path for the canonical CSV
        #[arg(short, long)]
        output: PathBuf,
        /// Target schema: denmark or netherlands
        #[arg(long, default_value = "netherlands")]
        schema: String,
    },
    /// Train one model per (model, horizon, seed) and write weights and traces
    Train(RunArgs),
    /// Score saved weights and persistence on the test split
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Directory holding the weight files (defaults to --out)
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Report formats, comma separated: markdown, json, csv
        #[arg(long, value_delimiter = ',', default_value = "markdown")]
        format: Vec<String>,
        /// Write per-timestamp predictions under <out>/predictions
        #[arg(long)]
        dump_predictions: bool,
    },
    /// Train with the pinned seeds and check the acceptance criteria
    Repro {
        #[command(flatten)]
        run: RunArgs,
        /// Report formats written to --out, comma separated
        #[arg(long, value_delimiter = ',', default_value = "markdown")]
        format: Vec<String>,
    },
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Run configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Canonical CSV of the dataset
    #[arg(long)]
    data: Option<PathBuf>,
    /// denmark, netherlands or custom
    #[arg(long)]
    dataset: Option<String>,
    /// Model kinds, comma separated, or `all`
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Forecast horizons in hours
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<u32>>,
    /// Training seeds
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
}

impl RunArgs {
    fn resolve(&self, defaults: Defaults) -> Result<RunConfig> {
        let file = self.config.as_deref().map(ConfigFile::load).transpose()?;
        let overrides = Overrides {
            dataset: self.dataset.clone(),
            data: self.data.clone(),
            models: self.models.clone(),
            horizons: self.horizons.clone(),
            seeds: self.seeds.clone(),
            out: self.out.clone(),
            train: TrainOverrides {
                max_epochs: self.epochs,
                batch_size: self.batch_size,
                learning_rate: self.learning_rate,
                patience: self.patience,
            },
        };
        RunConfig::resolve(file.as_ref(), &overrides, defaults)
    }
}

fn formats(names: &[String]) -> Result<Vec<ReportFormat>> {
    let joined = names.join(",");
    let formats: Vec<ReportFormat> =
        parse_list(&joined).map_err(|e| anyhow!(windcast::Error::InvalidArgument(e)))?;
    if formats.is_empty() {
        return Err(anyhow!(windcast::Error::InvalidArgument(
            "no report format given".into()
        )));
    }
    Ok(formats)
}

/// Sizes the global pool from `WINDCAST_THREADS` when it is set.
fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("WINDCAST_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            anyhow!(windcast::Error::Config(format!(
                "WINDCAST_THREADS must be a positive integer, got `{value}`"
            )))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow!(windcast::Error::Config(format!("thread pool: {e}"))))
}

fn trainable_defaults(seeds: Vec<u64>) -> Defaults {
    Defaults {
        models: ModelKind::TRAINABLE.to_vec(),
        seeds,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    init_threads()?;
    match cli.command {
        Command::Convert {
            input,
            output,
            schema,
        } => {
            commands::cmd_convert(&input, &Schema::by_id(&schema)?, &output)?;
        }
        Command::Train(args) => {
            let config = args.resolve(trainable_defaults(vec![42]))?;
            commands::cmd_train(&config)?;
        }
        Command::Evaluate {
            run,
            weights,
            format,
            dump_predictions,
        } => {
            let config = run.resolve(trainable_defaults(vec![42]))?;
            let options = EvaluateOptions {
                weights: weights.unwrap_or_else(|| config.out.clone()),
                formats: formats(&format)?,
                dump_predictions,
            };
            commands::cmd_evaluate(&config, &options)?;
        }
        Command::Repro { run, format } => {
            let mut config = run.resolve(trainable_defaults(ACCEPTANCE_SEEDS.to_vec()))?;
            if config.data.is_none() {
                let var = match config.dataset.as_str() {
                    "denmark" => "WINDCAST_DENMARK_CSV",
                    _ => "WINDCAST_NETHERLANDS_CSV",
                };
                config.data = std::env::var_os(var).map(PathBuf::from);
            }
            if !commands::cmd_repro(&config, &formats(&format)?)? {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// 3 for divergence, 2 for every other error.
fn exit_code(err: &anyhow::Error) -> u8 {
    let divergence = err.chain().any(|c| {
        matches!(
            c.downcast_ref::<windcast::Error>(),
            Some(windcast::Error::Divergence { .. })
        )
    });
    if divergence {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
