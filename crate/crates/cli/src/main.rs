//! `quatmotion` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

/// Bad flags, config files or option combinations.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Inputs that exist but cannot be used.
#[derive(Debug)]
pub struct DataError(pub String);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

/// Gradient checks that did not pass.
#[derive(Debug)]
pub struct NumericalError(pub String);

impl std::fmt::Display for NumericalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalError {}

#[derive(Parser, Debug)]
#[command(name = "quatmotion", version, about = "Quaternion-based motion prediction and generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert BVH or container clips, with optional augmentation.
    Convert(ConvertArgs),
    /// Train a pose network from a config file.
    TrainPose(TrainArgs),
    /// Train a pace network from a config file.
    TrainPace(TrainArgs),
    /// Continue clips with a trained pose network.
    Predict(PredictArgs),
    /// Generate locomotion along a ground trajectory.
    Generate(GenerateArgs),
    /// Evaluate a pose network under a protocol.
    Evaluate(EvaluateArgs),
    /// Evaluate a constant-pose baseline under a protocol.
    Baseline(BaselineArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// A .bvh or .qmc file, or a directory of them.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "container", value_parser = ["container", "bvh"])]
    pub format: String,
    /// Keep every phase of a factor-F downsampling.
    #[arg(long)]
    pub downsample: Option<usize>,
    /// Add mirrored copies: `auto` pairs Left*/Right* joints, or a list
    /// `LeftFoot:RightFoot,LeftHand:RightHand`.
    #[arg(long)]
    pub mirror: Option<String>,
    /// Deactivate joints that stay within this many radians of their mean.
    #[arg(long)]
    pub prune_tol: Option<f64>,
    /// Add this many copies of every clip rotated about the vertical.
    #[arg(long, default_value_t = 0)]
    pub augment_rotations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub horizon_ms: f64,
    /// Conditioning frames; defaults to the training setting.
    #[arg(long)]
    pub condition: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write BVH files.
    #[arg(long)]
    pub bvh: bool,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Controlled pose network checkpoint.
    #[arg(long)]
    pub pose: PathBuf,
    /// Pace network checkpoint.
    #[arg(long)]
    pub pace: PathBuf,
    /// CSV of ground-plane waypoints `x,z`, optional header.
    #[arg(long)]
    pub spline: PathBuf,
    /// Average speed, units per second.
    #[arg(long)]
    pub speed: f64,
    #[arg(long)]
    pub frames: usize,
    /// Dataset whose first clip provides the skeleton and conditioning frames.
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides the segment length stored in the checkpoints.
    #[arg(long)]
    pub segment_length: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub bvh: bool,
}

#[derive(Args, Debug)]
pub struct ProtocolArgs {
    /// `standard` (4 samples), `proposed` (128 samples) or `S=<int>`.
    #[arg(long, default_value = "standard")]
    pub protocol: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Treat --data as a Human3.6M exponential-map directory and measure the
    /// given action like the original benchmark code.
    #[arg(long)]
    pub h36m_action: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    #[arg(long, value_parser = ["zerovel", "runavg2", "runavg4"])]
    pub kind: String,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "desk", value_parser = ["desk", "full"])]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Entries sampled from each parameter tensor of the backbones.
    #[arg(long, default_value_t = 32)]
    pub per_tensor: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Creates `out` and writes `manifest.json` (command, version, seed and
/// configuration) before anything else goes there.
pub fn write_manifest(out: &Path, command: &str, seed: u64, config: Value) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": config,
    });
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use quatmotion::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<DataError>() {
            return 2;
        }
        if cause.is::<NumericalError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config(_) => 1,
                E::NonFinite(_) | E::Instability(_) | E::DegenerateQuaternion { .. } | E::InvalidRotation { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert(a) => commands::convert(&a),
        Command::TrainPose(a) => commands::train_pose(&a),
        Command::TrainPace(a) => commands::train_pace(&a),
        Command::Predict(a) => commands::predict(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Baseline(a) => commands::baseline(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
