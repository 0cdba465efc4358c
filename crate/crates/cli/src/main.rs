use std::path::PathBuf;
use std::process::ExitCode;

use cdforge_core::arch::ArchitectureKind;
use cdforge_core::data::Split;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Change detection with fully convolutional networks.
#[derive(Parser, Debug)]
#[command(name = "cdforge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network on the train split of a dataset manifest.
    Train(TrainArgs),
    /// Run a checkpoint on one image pair and write change maps.
    Predict(PredictArgs),
    /// Score a checkpoint on a manifest split.
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Arch {
    FcEf,
    FcSiamConc,
    FcSiamDiff,
}

impl From<Arch> for ArchitectureKind {
    fn from(a: Arch) -> Self {
        match a {
            Arch::FcEf => ArchitectureKind::FcEf,
            Arch::FcSiamConc => ArchitectureKind::FcSiamConc,
            Arch::FcSiamDiff => ArchitectureKind::FcSiamDiff,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args, Debug)]
struct Threads {
    /// Worker threads for all internal parallelism.
    #[arg(long, env = "CD_FORGE_THREADS", default_value_t = 1)]
    threads: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    arch: Arch,
    /// Directory for checkpoints and the run log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    /// Patches per optimizer step.
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Side of the square training patches.
    #[arg(long, default_value_t = 96)]
    patch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    /// Patches per training pair and epoch; by default scaled with image area.
    #[arg(long)]
    patches_per_pair: Option<usize>,
    #[command(flatten)]
    threads: Threads,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Expected architecture; checked against the checkpoint.
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    #[arg(long)]
    img1: PathBuf,
    #[arg(long)]
    img2: PathBuf,
    /// Ground truth; enables the comparison map and metrics.
    #[arg(long)]
    label: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Tile side for memory-bounded inference.
    #[arg(long)]
    tile: Option<usize>,
    /// Report wall-clock inference time.
    #[arg(long)]
    time: bool,
    #[command(flatten)]
    threads: Threads,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long)]
    tile: Option<usize>,
    /// Also write the per-image report as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    threads: Threads,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FaultArg {
    ConvBackward,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0x6ad)]
    seed: u64,
    /// Coordinates sampled per check.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Also check the three full networks.
    #[arg(long)]
    networks: bool,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<FaultArg>,
    #[command(flatten)]
    threads: Threads,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(commands::EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
