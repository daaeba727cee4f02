//! `lae-pacbayes`: ingest, split, train, bound, evaluate and verify from the command line.
//!
//! Exit status: 0 on success, 1 for user errors (bad arguments, unreadable files),
//! 2 for numerical or validation failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lae_pacbayes::experiment::PopulationSource;

use crate::config::DatasetFormat;

/// Worker-count variable, used when neither `--workers` nor the config sets one.
pub const WORKERS_ENV: &str = "LAE_PACBAYES_WORKERS";

#[derive(Debug)]
pub enum CliError {
    User(String),
    Core(lae_pacbayes::Error),
    /// A check or bound came out invalid.
    Failed(String),
}

impl From<lae_pacbayes::Error> for CliError {
    fn from(e: lae_pacbayes::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::Core(_) => 1,
            CliError::Failed(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(m) | CliError::Failed(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "lae-pacbayes", version, about = "PAC-Bayes bounds for linear autoencoders")]
struct Cli {
    /// Worker threads (overrides the config file and $LAE_PACBAYES_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert delimited user,item records into a coordinate file plus id maps.
    Ingest(IngestArgs),
    /// Split users into disjoint train and test coordinate files.
    Split(SplitArgs),
    /// Fit EASE and write the weight matrix.
    TrainEase(TrainEaseArgs),
    /// Bound the true risk of a saved model on a test split.
    Bound(BoundArgs),
    /// Recall@K and NDCG@K of a saved model on a masked test split.
    Metrics(MetricsArgs),
    /// Full protocol: split, EASE per gamma, bound and ranking metrics.
    Run(RunArgs),
    /// Cross-check every closed form against its sampling or enumeration oracle.
    Verify(VerifyArgs),
    /// Regression bound terms on a synthetic Gaussian model.
    MlrDemo(MlrDemoArgs),
    /// Write a synthetic clustered interaction dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Coordinate file to write; id maps go next to it.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long)]
    pub skip_header: bool,
    #[arg(long, default_value_t = 0)]
    pub min_user_interactions: usize,
    #[arg(long, default_value_t = 0)]
    pub min_item_interactions: usize,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Coordinate file.
    #[arg(long)]
    pub input: PathBuf,
    /// Receives train.coo and test.coo.
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainEaseArgs {
    /// Coordinate file with the training users.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub gamma: f64,
    /// Matrix file; `.bin` writes binary, anything else text.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct BoundArgs {
    /// Weight matrix file.
    #[arg(long)]
    pub model: PathBuf,
    /// Coordinate file with the test users.
    #[arg(long)]
    pub test: PathBuf,
    /// Matrix file holding the population correlation.
    #[arg(long, conflicts_with = "population_interactions")]
    pub population_matrix: Option<PathBuf>,
    /// Coordinate file whose correlation serves as the population.
    #[arg(long)]
    pub population_interactions: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    /// Seed of the hold-out mask.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.001)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    /// Comma-separated grid; default powers of two 1..512.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Unconstrained prior and posterior instead of zero-diagonal.
    #[arg(long)]
    pub full_diagonal: bool,
    /// Writes bound.txt and bound.json.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [50usize, 100])]
    pub ks: Vec<usize>,
    /// Writes metrics.json.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// TOML file with experiment keys; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<DatasetFormat>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// train, whole or file.
    #[arg(long)]
    pub population: Option<PopulationSource>,
    #[arg(long)]
    pub population_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// quick (under a minute) or full (adds the bound-validity frequency test).
    #[arg(long, default_value = "quick")]
    pub level: lae_pacbayes::verify::Level,
    /// Write the per-check results as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MlrDemoArgs {
    #[arg(long, default_value_t = 4)]
    pub inputs: usize,
    #[arg(long, default_value_t = 2)]
    pub outputs: usize,
    #[arg(long, default_value_t = 100)]
    pub m: usize,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Prior draws used to average Psi.
    #[arg(long, default_value_t = 2000)]
    pub prior_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    pub items: usize,
    #[arg(long, default_value_t = 200)]
    pub users: usize,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Coordinate file to write.
    #[arg(long)]
    pub output: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Split(a) => commands::split(&a),
        Command::TrainEase(a) => commands::train_ease(&a),
        Command::Bound(a) => commands::init_workers(cli.workers, None).and_then(|()| commands::bound(&a)),
        Command::Metrics(a) => commands::metrics(&a),
        Command::Run(a) => commands::run(&a, cli.workers),
        Command::Verify(a) => commands::init_workers(cli.workers, None).and_then(|()| commands::verify(&a)),
        Command::MlrDemo(a) => commands::mlr_demo(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
