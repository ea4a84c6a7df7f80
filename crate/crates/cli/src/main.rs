//! `vflite` command line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vflite::suppression::SuppressionConfig;
use vflite::{Error, ErrorKind, FeatureVariant};

#[derive(Parser, Debug)]
#[command(name = "vflite", version, about = "Streaming speaker-conditioned feature enhancement")]
pub struct Cli {
    /// JSON config file; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Extract features from a 16 kHz mono WAV into a VFF1 file.
    Features {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        variant: Option<FeatureVariant>,
    },
    /// Compute a d-vector from a reference recording (at least 1 s).
    Embed {
        reference: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = vflite::embed::DEFAULT_DVEC_DIM)]
        dim: usize,
    },
    /// Write a synthetic corpus (WAVs plus manifest) of band-limited talkers.
    Synth(SynthArgs),
    /// Mix a manifest into a training archive.
    Mix(MixArgs),
    /// Train a mask network on a mixture archive.
    Train(TrainArgs),
    /// Enhance a WAV file frame by frame.
    Enhance(EnhanceArgs),
    /// Convert a float model to int8 weights.
    Quantize { input: PathBuf, output: PathBuf },
    /// Evaluate a model on a manifest under several conditions.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    pub outdir: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub items: usize,
    #[arg(long, default_value_t = 1.5)]
    pub secs: f64,
    #[arg(long, default_value_t = 0.5)]
    pub speech_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct MixArgs {
    pub manifest: PathBuf,
    pub outdir: PathBuf,
    #[arg(long)]
    pub snr_lo: Option<f64>,
    #[arg(long)]
    pub snr_hi: Option<f64>,
    #[arg(long)]
    pub reverb: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<FeatureVariant>,
    #[arg(long, default_value_t = vflite::embed::DEFAULT_DVEC_DIM)]
    pub dvec_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Two 32-unit LSTMs.
    Toy,
    /// Three 256-unit LSTMs.
    Small,
    /// Three 512-unit LSTMs.
    Standard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    L2,
    Asym,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub output: PathBuf,
    /// Network topology JSON; overrides --preset.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Toy)]
    pub preset: Preset,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the noise-type hinge loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Total number of steps, counting steps done before a resume.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// JSON-lines metrics log; defaults to `<output>.metrics.jsonl`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: u64,
}

#[derive(Args, Debug)]
pub struct EnhanceArgs {
    pub input: PathBuf,
    pub dvec: PathBuf,
    pub model: PathBuf,
    pub output: PathBuf,
    /// off, fixed:W, adaptive or adaptive:A,B,BETA
    #[arg(long)]
    pub suppression: Option<SuppressionConfig>,
    /// Per-frame `frame<TAB>w<TAB>score` trace.
    #[arg(long)]
    pub w_trace: Option<PathBuf>,
    /// Whole-file reference path instead of streaming.
    #[arg(long)]
    pub batch: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub manifest: PathBuf,
    pub model: PathBuf,
    pub report: PathBuf,
    #[arg(long, default_value = "clean,additive,reverb,speech,nonspeech")]
    pub conditions: String,
    #[arg(long)]
    pub suppression: Option<SuppressionConfig>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub snr_lo: Option<f64>,
    #[arg(long)]
    pub snr_hi: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vflite: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
