//! `ssmnet`: extract patches, synthesize corpora, train and evaluate.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 corpus validation
//! error, 4 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssmnet::eval::VariantKind;
use ssmnet::Error;

#[derive(Debug, Parser)]
#[command(name = "ssmnet", version, about = "Train audio embeddings whose self-similarity matches annotated structure")]
pub struct Cli {
    /// Worker threads for per-track work (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute beat-synchronous CQT patches for one audio file.
    Extract(ExtractArgs),
    /// Train the encoder on a manifest of tracks.
    Train(TrainArgs),
    /// Score a feature variant on a manifest of tracks.
    Eval(EvalArgs),
    /// Write a synthetic corpus with a manifest.
    Synth(SynthArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Input WAV file (PCM16 or float32; 22050 Hz or an integer multiple).
    #[arg(long)]
    pub audio: PathBuf,
    /// Beat times, one per line, in seconds.
    #[arg(long)]
    pub beats: Option<PathBuf>,
    /// Place uniform beats every SECONDS when no beats file is given.
    #[arg(long, value_name = "SECONDS")]
    pub beat_period: Option<f64>,
    /// Output patch file (.ssmf); a .json sidecar is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON configuration file (only the `cqt` section is used).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus manifest (JSON list of tracks).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Where to write the trained model (.ssmn).
    #[arg(long)]
    pub out_model: Option<PathBuf>,
    /// Write a checkpoint here after every epoch.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Learning rate [default: 5e-4].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Weight decay [default: 1e-2].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Tracks per mini-batch [default: 6].
    #[arg(long)]
    pub batch_tracks: Option<usize>,
    /// MADGRAD momentum [default: 0.9].
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Epoch budget [default: 100].
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Non-improving epochs tolerated before stopping [default: 10].
    #[arg(long)]
    pub patience: Option<usize>,
    /// Held-out fraction of tracks [default: 0.1].
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Seed for initialisation, split and shuffling [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Corpus manifest (JSON list of tracks).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Feature variant: cqt, convnet or ssmnet.
    #[arg(long)]
    pub variant: VariantKind,
    /// Trained model, required for ssmnet.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Report CSV; the summary JSON is written next to it.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write one PGM per track and variant plus one for the ground truth.
    #[arg(long)]
    pub render_dir: Option<PathBuf>,
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the random encoder for convnet [default: the training seed].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of tracks.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Standard deviation of the additive noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 8)]
    pub beats_per_section: usize,
    /// Seconds between beats.
    #[arg(long, default_value_t = 0.5)]
    pub beat_period: f64,
    #[arg(long, default_value_t = 20)]
    pub frames_per_beat: usize,
    /// Spectral peaks per section template.
    #[arg(long, default_value_t = 4)]
    pub peaks: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random points per primitive.
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    /// Encoder parameters checked in the end-to-end test.
    #[arg(long, default_value_t = 84)]
    pub coords: usize,
    /// Patches in the end-to-end test.
    #[arg(long, default_value_t = 6)]
    pub patches: usize,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation { .. } | Error::TooShort(_) | Error::UndefinedAuc(_) => 3,
        Error::NonFinite(_) | Error::Degenerate(_) | Error::Tape(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Extract(a) => commands::extract(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
