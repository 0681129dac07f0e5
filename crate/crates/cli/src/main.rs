//! `frera`: pretraining, evaluation and analysis of learned frequency-domain
//! augmentations for time-series contrastive learning.

mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "frera", version, about = "Learned frequency-domain augmentation for time-series contrastive learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the spectral and view-generator property suites.
    Properties(PropertiesArgs),
    /// Contrastive pretraining; writes a checkpoint and a JSON-lines log.
    Train(TrainArgs),
    /// Linear evaluation of a checkpoint's encoder.
    Eval(EvalArgs),
    /// Mutual-information, energy and score exports (CSV / text).
    Analyze(AnalyzeArgs),
    /// Generate a synthetic dataset with label-carrying frequency bins.
    Synth(SynthArgs),
    /// Write augmented views of a dataset.
    Augment(AugmentArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// UCR file or directory, or a csv_dir directory.
    #[arg(long)]
    pub data: PathBuf,
    /// ucr_tsv or csv_dir; guessed from the path when omitted.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Args, Debug)]
pub struct PropertiesArgs {
    /// Comma-separated series lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 37, 128])]
    pub sizes: Vec<usize>,
    /// Comma-separated channel counts.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3])]
    pub channels: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only run one suite.
    #[arg(long, value_enum)]
    pub suite: Option<SuiteArg>,
    /// Inject a known defect (inverse_sign) to confirm the suite catches it.
    #[arg(long)]
    pub mutation: Option<String>,
    /// Directory for the JSON report and run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SuiteArg {
    Spectral,
    Frera,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON training config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau_w: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_model: Option<f64>,
    #[arg(long)]
    pub lr_s: Option<f64>,
    /// small or full
    #[arg(long)]
    pub profile: Option<String>,
    /// mean, median or mean_plus_std
    #[arg(long)]
    pub threshold: Option<String>,
    /// Replace the learned augmentation with a predefined one
    /// (jitter, scaling, permutation, low_pass, high_pass, phase_shift).
    #[arg(long, conflicts_with_all = ["random_mask", "no_distortion"])]
    pub baseline: Option<String>,
    /// Replace the learned mask with Bernoulli(P) draws.
    #[arg(long, value_name = "P", conflicts_with = "no_distortion")]
    pub random_mask: Option<f64>,
    /// Keep the learned mask but drop the distortion of unimportant components.
    #[arg(long)]
    pub no_distortion: bool,
    #[arg(long)]
    pub no_balanced: bool,
    /// Epoch interval of the validation probe (0 disables selection).
    #[arg(long)]
    pub probe_every: Option<usize>,
    /// Do not echo log lines to standard output.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint directory (or a training output directory).
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Gradient steps of the linear probe.
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    /// Evaluate the final encoder instead of the validation-selected one.
    #[arg(long)]
    pub final_encoder: bool,
    /// Directory for the JSON report and run manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
#[value(rename_all = "snake_case")]
pub enum Analysis {
    #[value(alias = "mi-time")]
    MiTime,
    #[value(alias = "mi-freq")]
    MiFreq,
    Energy,
    #[value(alias = "export-s")]
    ExportS,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub what: Analysis,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = frera_core::analysis::DEFAULT_BINS)]
    pub bins: usize,
    /// mi_time: also measure a predefined augmentation.
    #[arg(long)]
    pub baseline: Option<String>,
    /// mi_freq: magnitude or complex.
    #[arg(long, default_value = "magnitude")]
    pub feature: String,
    /// Split seed when the data has no fixed splits; defaults to the
    /// checkpoint's seed, else 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON synthetic spec; the built-in three-class spec when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Threshold the mask at 0.5 instead of using relaxed values.
    #[arg(long)]
    pub hard: bool,
    /// Use a predefined augmentation instead of the checkpoint's scores.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result: Result<(), Failure> = match cli.command {
        Command::Properties(a) => commands::properties(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Synth(a) => commands::synth(a),
        Command::Augment(a) => commands::augment(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("frera: {f}");
            ExitCode::from(f.code())
        }
    }
}
