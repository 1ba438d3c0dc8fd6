//! Command-line front end: every subcommand reads an experiment config
//! (plus `--set` overrides) and exchanges data through plain files.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rankcal::config::{env_overrides, parse_assignment, ExperimentConfig};
use rankcal::negatives::Strategy;
use rankcal::Result;

pub mod commands;
pub mod files;
pub mod pipeline;

const CONFIG_HELP: &str = "\
Configuration is a TOML file with sections [run], [synthetic], [domains.<name>],
[negatives], [scorer], [ensemble], [dropout], [risk], [calibration], [nota] and
[grid]; see configs/default.toml for every key with its default. Values can be
overridden with `--set section.key=value` (repeatable) or with environment
variables RANKCAL_SECTION__KEY=value; explicit flags win over the environment.
Paths inside the config are relative to the config file's directory.";

#[derive(Debug, Parser)]
#[command(name = "rankcal", version, about = "Calibration and uncertainty experiments for response rankers", after_help = CONFIG_HELP)]
pub struct Cli {
    /// Experiment config file; built-in defaults when absent.
    #[arg(long, global = true, env = "RANKCAL_CONFIG")]
    pub config: Option<PathBuf>,

    /// Override a config value, e.g. `--set scorer.epochs=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Deterministic,
    Ensemble,
    Dropout,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Deterministic, Method::Ensemble, Method::Dropout];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Deterministic => "deterministic",
            Method::Ensemble => "ensemble",
            Method::Dropout => "dropout",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic corpora for configured domains.
    Gen {
        /// Domains to generate (default: every configured domain).
        #[arg(long)]
        domain: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Rebuild a corpus's candidate lists with a negative-sampling strategy.
    SampleNegatives {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        out: PathBuf,
        /// Response pool file; built from the corpus's ground truth when absent.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Also write the pool used.
        #[arg(long)]
        save_pool: Option<PathBuf>,
    },
    /// Train the ensemble on a corpus and write the model directory.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed scope of the ensemble, usually the source domain name.
        #[arg(long, default_value = "base")]
        scope: String,
    },
    /// Score a corpus and write a run file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        out: PathBuf,
    },
    /// Balanced calibration error and reliability buckets of a run file.
    Calibrate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// `mean` or `deterministic` (first sample).
        #[arg(long, default_value = "mean")]
        reducer: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write a reliability-curve plot spec.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Risk-aware re-ranking of a run file.
    Rerank {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Risk aversion; defaults to risk.b.
        #[arg(long, allow_hyphen_values = true)]
        b: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metric and gain over b = 0 for every value of risk.b_grid.
    SweepB {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Pick b on a validation run.
    SelectB {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a NOTA dataset from a corpus and cross-validate the feature specs.
    Nota {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ensemble_run: Option<PathBuf>,
        #[arg(long)]
        dropout_run: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Full cross-domain / cross-NS grid.
    Grid {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Metrics of ranked-list files, with paired t-tests against a baseline.
    Eval {
        #[arg(long, required = true)]
        ranked: Vec<PathBuf>,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Recall cutoffs.
        #[arg(long, value_delimiter = ',', default_value = "1")]
        k: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// gen, train, predict, calibrate, select-b, sweep-b and nota in one run,
    /// finishing with a sha256 manifest of every artifact.
    Pipeline {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

impl Cli {
    pub fn load_config(&self) -> Result<ExperimentConfig> {
        let overrides = self
            .overrides
            .iter()
            .map(|s| parse_assignment(s))
            .collect::<Result<Vec<_>>>()?;
        match &self.config {
            Some(p) => ExperimentConfig::load(p, &overrides),
            None => {
                let mut all = env_overrides(std::env::vars());
                all.extend(overrides);
                ExperimentConfig::from_toml_with("", &all)
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = cli.load_config()?;
    commands::dispatch(&cfg, cli.command)
}
