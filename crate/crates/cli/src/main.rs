//! `beta3-irt`: simulate response data, fit Beta3 and 2PL-ND models, predict,
//! and run the evaluation experiments from the command line.

mod commands;
mod error;
mod formats;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "beta3-irt", version, about = "Beta item response theory: simulate, fit, predict, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a response dataset or a classifier panel from a JSON spec.
    Simulate(SimulateArgs),
    /// Fit a model to a response or panel CSV.
    Fit(FitArgs),
    /// Expected responses for respondent/item pairs.
    Predict(PredictArgs),
    /// Model comparison, classifier metrics and label-noise experiments.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
    /// Item characteristic curve of one item on a grid of abilities.
    Icc(IccArgs),
    /// Re-run a command from its manifest and check the outputs match.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON spec with `"kind": "irt"` or `"kind": "panel"`.
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the seed in the spec.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Mle,
    Vi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Beta3,
    #[value(name = "2plnd")]
    TwoPlNd,
}

impl From<FamilyArg> for beta3_irt::params::Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Beta3 => Self::Beta3,
            FamilyArg::TwoPlNd => Self::TwoPlNd,
        }
    }
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct DataInput {
    /// CSV with `respondent_id,item_id,response` rows.
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Classifier panel CSV; responses are the probabilities of the labelled class.
    #[arg(long)]
    pub panel: Option<PathBuf>,
}

/// Optimizer settings shared by several commands. Unset values take the
/// library defaults.
#[derive(Debug, Args)]
pub struct FitFlags {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// SGD iterations (mle).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Minibatch size (mle).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Prior standard deviation of the discriminations (vi).
    #[arg(long)]
    pub sigma0: Option<f64>,
    /// Responses and predictions are clipped to [eps, 1 - eps].
    #[arg(long)]
    pub clip_eps: Option<f64>,
    /// Outer coordinate-ascent iterations (vi).
    #[arg(long)]
    pub outer_iters: Option<usize>,
    /// Monte Carlo draws per gradient estimate (vi).
    #[arg(long)]
    pub mc_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: DataInput,
    #[arg(long, value_enum, default_value_t = Method::Mle)]
    pub method: Method,
    #[arg(long, value_enum, default_value_t = FamilyArg::Beta3)]
    pub family: FamilyArg,
    #[command(flatten)]
    pub flags: FitFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// CSV with `respondent_id,item_id` rows.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Fail unless the parameters belong to this family.
    #[arg(long, value_enum)]
    pub family: Option<FamilyArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvaluateCommand {
    /// Beta3 against 2PL-ND on repeated holdouts of each dataset.
    Compare(CompareArgs),
    /// Ability next to accuracy, F1, Brier score, log-loss and AUC.
    Metrics(MetricsArgs),
    /// Refit a panel with increasing fractions of flipped labels.
    NoiseScan(NoiseScanArgs),
    /// Items whose posterior-mean discrimination is below a threshold.
    FlagNoise(FlagNoiseArgs),
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Response CSV; repeat for several datasets.
    #[arg(long, required = true)]
    pub responses: Vec<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0.9)]
    pub train_fraction: f64,
    /// Significance level of the Wilcoxon test.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[command(flatten)]
    pub flags: FitFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub panel: PathBuf,
    /// Fitted parameters; abilities are matched to classifiers by ID.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct NoiseScanArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4")]
    pub fractions: Vec<f64>,
    #[command(flatten)]
    pub flags: FitFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlagNoiseArgs {
    #[arg(long)]
    pub posteriors: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IccArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub item: String,
    /// Number of ability values, evenly spaced from 1e-6 to 1 - 1e-6.
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn run(argv: &[String]) -> Result<()> {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let recorded = manifest::strip_out(&argv[1..]);
    commands::dispatch(cli.command, recorded)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    match run(&argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
