mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Language-identification backend, calibration, evaluation and audio
/// augmentation.
#[derive(Debug, Parser)]
#[command(name = "lidkit", version)]
pub struct Cli {
    /// JSON configuration: a pipeline config, or the section the subcommand
    /// needs on its own.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for produced files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,

    /// Language list file, one name per line; overrides the config.
    #[arg(long, global = true)]
    pub languages: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Augment the audio of every manifest entry and log the plans.
    Augment(AugmentArgs),
    /// Fit the embedding backend on a labelled training split.
    TrainBackend(TrainArgs),
    /// Score embeddings with a trained backend.
    Score(ScoreArgs),
    /// Fit calibration (one score file) or fusion (several) on labelled data.
    Calibrate(CalibrateArgs),
    /// Apply a calibration or fusion model to score files.
    Fuse(FuseArgs),
    /// Compute Cavg, minCavg, EER, Cllr and accuracy.
    Evaluate(EvaluateArgs),
    /// Check every analytic gradient against central differences.
    Gradcheck(GradcheckArgs),
    /// Sweep enrollment size on synthetic embeddings.
    Fewshot(FewshotArgs),
    /// Train, calibrate and evaluate in one run.
    Pipeline(PipelineArgs),
    /// Write a synthetic Gaussian embedding corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Defaults to the manifest path with extension `.emb`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Defaults to `<out-dir>/backend.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Defaults to `<out-dir>/scores.tsv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// One or more score files over the same trials.
    #[arg(long, required = true, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    /// Manifest carrying the true labels.
    #[arg(long)]
    pub labels: PathBuf,
    /// Defaults to `<out-dir>/calibration.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    /// Defaults to `<out-dir>/fused.tsv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// One table row per file.
    #[arg(long, required = true, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub labels: PathBuf,
    /// Overrides the configured target prior.
    #[arg(long)]
    pub p_target: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = lidkit_core::gradcheck::DEFAULT_INSTANCES)]
    pub instances: usize,
    #[arg(long, default_value_t = lidkit_core::gradcheck::DEFAULT_STEP)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct FewshotArgs {
    #[arg(long, default_value_t = 13)]
    pub n_languages: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 5.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    /// Enrollment pool per language.
    #[arg(long, default_value_t = 100)]
    pub pool: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,5,10,20,50,100")]
    pub sizes: Vec<usize>,
    /// Number of seeds averaged, starting at `--seed`.
    #[arg(long, default_value_t = 5)]
    pub n_seeds: u64,
    #[arg(long, default_value_t = 200)]
    pub test_per_class: usize,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 13)]
    pub n_languages: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 200)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 200)]
    pub eval_per_class: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain with ": ", dropping causes that an outer message
/// already spells out.
fn render_error(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut previous = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !previous.is_empty() && previous.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
        previous = msg;
    }
    out
}
