use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "regionseg", version, about = "Region-consistent actor-action segmentation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train the model in two stages.
    Train(TrainArgs),
    /// Write per-frame label predictions.
    Predict(PredictArgs),
    /// Fuse region scores into pixel scores.
    Fuse(FuseArgs),
    /// Score predictions against a dataset.
    Evaluate(EvaluateArgs),
    /// Finite-difference check of every differentiable layer.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    /// Scene spec JSON; defaults to the built-in part-motion scenes.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Streams {
    RgbFlow,
    RgbOnly,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Head {
    Baseline,
    Region,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Experiment config JSON (as echoed by a previous run).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "toy")]
    pub preset: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub streams: Option<Streams>,
    #[arg(long)]
    pub feature_width: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub stage1_iters: Option<usize>,
    #[arg(long)]
    pub stage2_iters: Option<usize>,
    #[arg(long, value_enum, default_value = "all")]
    pub stage: Stage,
    /// Continue from the parameters and log already in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorruptionLevel {
    None,
    Mild,
    Severe,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Parameter file; `config.json` must sit next to it.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "region")]
    pub mode: Head,
    /// Starting corruption of the test-time masks; the flags below override
    /// individual fields.
    #[arg(long, value_enum, default_value = "none")]
    pub corruption: CorruptionLevel,
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Positive erodes, negative dilates.
    #[arg(long, allow_hyphen_values = true)]
    pub morph_radius: Option<i32>,
    #[arg(long)]
    pub drop_prob: Option<f64>,
    #[arg(long)]
    pub spurious_rate: Option<f64>,
    #[arg(long)]
    pub downsample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub corruption_seed: u64,
}

#[derive(Args)]
pub struct FuseArgs {
    /// f32 payload of shape (N + 1, K); row 0 holds the background scores.
    #[arg(long)]
    pub scores: PathBuf,
    /// Region file JSON with mask payloads beside it.
    #[arg(long)]
    pub regions: PathBuf,
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory; defaults to the prediction directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub non_boundary: bool,
    #[arg(long, default_value_t = regionseg::metrics::DEFAULT_BAND_RADIUS)]
    pub radius: usize,
    /// Also print an aligned text table.
    #[arg(long)]
    pub table: bool,
    #[arg(long, default_value = "model")]
    pub method: String,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturb every analytic gradient; the run must then fail.
    #[arg(long)]
    pub inject_fault: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Fuse(a) => commands::fuse(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<commands::VerificationFailed>() => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
