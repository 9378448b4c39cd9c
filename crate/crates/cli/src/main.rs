//! `starshape`: data synthesis, training, evaluation and reporting from the command line.

mod commands;
mod error;
mod manifest;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "starshape", version, about = "Separable and star-shaped GANs for two-channel cell images")]
struct Cli {
    /// Worker threads for parallel stages [default: number of cores]
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log more (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic two-channel cell dataset
    SynthData(SynthArgs),
    /// Train a generator; settings come from a YAML or JSON config, flags override them
    Train(TrainArgs),
    /// Classifier two-sample test of a checkpoint, or of real classes against each other
    EvalC2st(C2stArgs),
    /// Recover latents of held-out test images
    Reconstruct(ReconArgs),
    /// Render a red-latent interpolation strip with fixed green latents
    Interpolate(InterpArgs),
    /// Build multi-channel composites by red-channel nearest neighbours
    MineMultichannel(MineArgs),
    /// Render plots and a Markdown summary from result files
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Comma-separated classes as `name[:pattern[:noise]]`; the pattern defaults to the name
    #[arg(long, value_delimiter = ',', required = true)]
    classes: Vec<String>,
    /// Images per class
    #[arg(long, default_value_t = 500)]
    count: usize,
    /// Fraction of every class held out as test data
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, env = "STARSHAPE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Dataset directory [default: config `data`, then STARSHAPE_DATA_DIR]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Continue from this checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, env = "STARSHAPE_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    kind: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
    /// Comma-separated classes to train on
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct C2stArgs {
    /// Generator checkpoint; omit together with --matrix for real-vs-real scores
    #[arg(long, required_unless_present = "matrix")]
    checkpoint: Option<PathBuf>,
    #[arg(long, env = "STARSHAPE_DATA_DIR")]
    data: PathBuf,
    #[arg(long, default_value = "wgan-gp")]
    flavor: String,
    #[arg(long, default_value_t = starshape::c2st::DEFAULT_SPLITS)]
    splits: usize,
    #[arg(long, default_value_t = starshape::c2st::DEFAULT_TRAIN_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Filters of the first convolution of the test's discriminator
    #[arg(long, default_value_t = 32)]
    disc_width: usize,
    #[arg(long, env = "STARSHAPE_SEED", default_value_t = 0)]
    seed: u64,
    /// Comma-separated classes; defaults to those of the checkpoint, then all
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    /// Score train images of every class against test images of every class (CSV output)
    #[arg(long, conflicts_with = "checkpoint")]
    matrix: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReconArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, env = "STARSHAPE_DATA_DIR")]
    data: PathBuf,
    #[arg(long, default_value = "regular")]
    mode: String,
    #[arg(long, default_value_t = starshape::latent::DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, default_value_t = starshape::latent::DEFAULT_ITERS)]
    iters: usize,
    /// Test images per class to reconstruct (all when omitted)
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    #[arg(long, env = "STARSHAPE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct InterpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, env = "STARSHAPE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MineArgs {
    #[arg(long, env = "STARSHAPE_DATA_DIR")]
    data: PathBuf,
    /// Comma-separated classes in green-channel order [default: all]
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Training logs, C2ST reports (JSON), C2ST matrices or reconstruction results (CSV)
    #[arg(long = "in", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Plot to write; the Markdown summary goes next to it
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let ctx = commands::Context {
        argv: argv[1..].to_vec(),
        workers,
    };
    let result: Result<(), CliError> = match cli.command {
        Command::SynthData(a) => commands::synth_data(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::EvalC2st(a) => commands::eval_c2st(&ctx, a),
        Command::Reconstruct(a) => commands::reconstruct(&ctx, a),
        Command::Interpolate(a) => commands::interpolate(&ctx, a),
        Command::MineMultichannel(a) => commands::mine(&ctx, a),
        Command::Report(a) => commands::report(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
