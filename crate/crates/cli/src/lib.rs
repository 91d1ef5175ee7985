//! Command-line driver: dataset generation, training, evaluation and loss
//! comparison, with flat-file configuration and CSV output.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::LlrSource;
use crate::config::{parse_formula, ExperimentConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "seqratio", version, about = "Early time-series classification with LLR matrices and the MSPRT")]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides `model.order`.
    #[arg(long, global = true)]
    pub order: Option<usize>,

    /// Overrides `model.formula`: tandem or tandemwo.
    #[arg(long, global = true)]
    pub formula: Option<String>,

    /// Overrides `eval.thresholds`.
    #[arg(long, global = true)]
    pub thresholds: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Samples a dataset from the configured Gaussian source.
    GenData {
        /// Output dataset file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains the temporal integrator and writes a checkpoint and loss trace.
    Train {
        /// SEQB dataset file.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sweeps MSPRT thresholds and writes the SAT curve, error statistics and
    /// decisions.
    Eval {
        /// SEQB dataset file.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Trained model checkpoint.
        #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
        checkpoint: Option<PathBuf>,
        /// Use the true LLRs of the configured source instead of a model.
        #[arg(long)]
        oracle: bool,
    },
    /// Trains one model per (loss, seed) on the synthetic task and ranks the
    /// losses.
    CompareLosses {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated loss names; overrides `compare.losses`.
        #[arg(long, value_delimiter = ',')]
        losses: Option<Vec<String>>,
    },
}

impl Cli {
    /// Loads the configuration and applies command-line overrides.
    pub fn resolve_config(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        }
        if let Some(order) = self.order {
            cfg.model_order = order;
        }
        if let Some(f) = &self.formula {
            cfg.model_formula = parse_formula(f)?;
        }
        if let Some(n) = self.thresholds {
            cfg.eval_thresholds = n;
        }
        cfg.check()?;
        Ok(cfg)
    }
}

/// Runs one command, printing a short report to stdout.
pub fn run(cli: &Cli) -> CliResult<()> {
    let cfg = cli.resolve_config()?;
    match &cli.command {
        Command::GenData { out } => {
            let digest = commands::gen_data(&cfg, out)?;
            println!("sha256 {digest}  {}", out.display());
        }
        Command::Train { data, out, resume } => {
            let result = commands::train_cmd(&cfg, data, out, resume.as_deref());
            match &result {
                Ok(run) => {
                    if let Some(last) = run.trace.last() {
                        println!("iteration {} L_total {}", last.iteration, last.total);
                    }
                    println!("checkpoint {}", commands::checkpoint_path(out).display());
                }
                Err(CliError::Divergence(_)) => {
                    eprintln!("trace and last finite checkpoint written to {}", out.display());
                }
                Err(_) => {}
            }
            result?;
        }
        Command::Eval {
            data,
            out,
            checkpoint,
            oracle,
        } => {
            let source = match (checkpoint, oracle) {
                (Some(path), false) => LlrSource::Checkpoint(path),
                (None, true) => LlrSource::Oracle,
                _ => return Err(CliError::Config("pass exactly one of --checkpoint and --oracle".into())),
            };
            let formula = cli.formula.as_deref().map(parse_formula).transpose()?;
            let summary = commands::eval_cmd(&cfg, data, source, cli.order, formula, out)?;
            println!(
                "{} curve points, NP error at T {}",
                summary.points, summary.np_error_at_end
            );
        }
        Command::CompareLosses { out, losses } => {
            let names = losses.clone().unwrap_or_else(|| cfg.compare_losses.clone());
            let cmp = commands::compare_cmd(&cfg, &names, out)?;
            let mut ranked: Vec<_> = cmp.summary.iter().collect();
            ranked.sort_by_key(|s| s.rank);
            for s in ranked {
                println!(
                    "{} {} median error {} diverged {}",
                    s.rank,
                    s.loss.name(),
                    s.median_error,
                    s.diverged_runs
                );
            }
        }
    }
    Ok(())
}

/// Caps the global thread pool at `SEQRATIO_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("SEQRATIO_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("SEQRATIO_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}
