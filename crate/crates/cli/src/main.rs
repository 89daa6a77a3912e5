mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use slicedp::ErrorClass;

#[derive(Parser)]
#[command(
    name = "slicedp",
    version,
    about = "Private synthetic tables from noisy random slices"
)]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Privacy accounting for the slicing mechanism.
    Account(AccountArgs),
    /// Encode a table and release its noisy slices.
    Slice(SliceArgs),
    /// Fit a generator to a released bundle.
    Train(TrainArgs),
    /// Sample synthetic rows from a trained generator.
    Generate(GenerateArgs),
    /// Score a synthetic table against real data.
    Evaluate(EvaluateArgs),
    /// Slice, train and generate in one go.
    Run(RunArgs),
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("noise").required(true).args(["sigma", "epsilon"])))]
pub struct AccountArgs {
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Target epsilon; sigma is calibrated to meet it.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub delta: f64,
    /// Report epsilon at this order instead of the optimal one.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Poisson subsampling rate.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Write the full report as JSON to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct SliceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
}

#[derive(Args, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Args, Clone)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub rows: Option<usize>,
    /// Output CSV (default `<out>/synthetic.csv`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Real data to compare against, ideally held out from slicing.
    #[arg(long)]
    pub real: PathBuf,
    /// Synthetic CSV (default `<out>/synthetic.csv`).
    #[arg(long)]
    pub synthetic: Option<PathBuf>,
    /// Binary column used for the logistic-regression F1.
    #[arg(long)]
    pub target: Option<String>,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub slice: SliceArgs,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub rows: Option<usize>,
    /// Held-out real data; when given, the synthetic table is evaluated.
    #[arg(long)]
    pub holdout: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<String>,
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
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }

    let seed = cli.seed;
    let result = match cli.command {
        Command::Account(a) => commands::account(&a),
        Command::Slice(a) => commands::slice(&a, seed),
        Command::Train(a) => commands::train(&a, seed),
        Command::Generate(a) => commands::generate(&a, seed),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Run(a) => commands::run(&a, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
