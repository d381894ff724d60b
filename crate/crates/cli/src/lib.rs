//! `cafv`: generate benchmarks, train classifiers and generators, synthesize
//! rare-class features and evaluate augmentation, with every run leaving a
//! `run.json` manifest of its inputs and outputs.

mod commands;
mod error;
mod manifest;
mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use cafv_core::data::FeatureFormat;
use clap::{Args, Parser, Subcommand};

pub use error::{CliError, CliResult};
pub use manifest::{sha256_file, FileDigest, RunManifest, RUN_MANIFEST};

#[derive(Debug, Parser)]
#[command(name = "cafv", version, about = "Context-aware feature synthesis for rare intensity classes")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Overrides the seed in the config or spec.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Training config (JSON); missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Feature file format for outputs.
    #[arg(long, global = true, default_value = "csv", value_parser = parse_format)]
    pub format: FeatureFormat,

    /// Only log errors.
    #[arg(long, global = true)]
    pub quiet: bool,
}

fn parse_format(s: &str) -> Result<FeatureFormat, String> {
    s.parse()
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic benchmark: train/test features and class prototypes.
    GenData {
        /// Benchmark spec (JSON); defaults to the 9-class benchmark.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Fit the softmax classifier on the training split.
    TrainClassifier {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the generators and critics against a frozen classifier.
    TrainGan {
        #[arg(long)]
        data: PathBuf,
        /// Classifier checkpoint; required unless resuming.
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Continue from a checkpoint written by this command.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many generator steps in total.
        #[arg(long)]
        stop_at: Option<u64>,
        /// Also checkpoint every N generator steps.
        #[arg(long)]
        checkpoint_every: Option<u64>,
    },
    /// Translate real records into synthetic ones for target labels.
    Synthesize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gan: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        targets: Vec<i32>,
        /// Records per target.
        #[arg(long, default_value_t = 200)]
        count: usize,
    },
    /// Score a classifier on the test split.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        /// Histogram bin width in m/s; defaults to the classifier's config.
        #[arg(long)]
        bin_width: Option<f64>,
    },
    /// Baseline versus augmented classifier, one directory per seed.
    AugmentEval {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated rare labels.
        #[arg(long, value_delimiter = ',', required = true)]
        rare: Vec<i32>,
        /// Comma-separated seeds; one run directory each.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Compare analytic and finite-difference gradients for every loss term.
    Gradcheck {
        /// Number of random models, starting at --seed.
        #[arg(long, default_value_t = 20)]
        trials: u64,
        /// Use a learned context table instead of one-hot codes.
        #[arg(long)]
        learned: bool,
    },
    /// Print a checkpoint's manifest and hyperparameters.
    InspectCheckpoint { dir: PathBuf },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::TrainClassifier { .. } => "train-classifier",
            Command::TrainGan { .. } => "train-gan",
            Command::Synthesize { .. } => "synthesize",
            Command::Evaluate { .. } => "evaluate",
            Command::AugmentEval { .. } => "augment-eval",
            Command::Gradcheck { .. } => "gradcheck",
            Command::InspectCheckpoint { .. } => "inspect-checkpoint",
        }
    }
}

fn init_logging(quiet: bool) {
    let env = env_logger::Env::new().filter_or("CAFV_LOG", "info");
    let mut b = env_logger::Builder::from_env(env);
    if quiet {
        b.filter_level(log::LevelFilter::Error);
    }
    b.format_timestamp(None).target(env_logger::Target::Stderr);
    let _ = b.try_init();
}

/// Parse `argv` (program name first), run one subcommand and return the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.global.quiet);
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(&cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}
