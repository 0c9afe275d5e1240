//! Command-line front end: argument parsing, configuration precedence and
//! the six pipelines.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::run;

/// A user-facing validation failure (exit code 2).
#[derive(Debug)]
pub struct ValidationError(pub String);

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ValidationError {}

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Maps an error chain onto the documented exit codes.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ValidationError>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<unside::Error>() {
            return match e {
                unside::Error::InvalidArgument(_) | unside::Error::Unsupported(_) => EXIT_VALIDATION,
                unside::Error::TrainingFailure { .. } => EXIT_NUMERIC,
                unside::Error::Io { .. } | unside::Error::Json { .. } | unside::Error::Checkpoint(_) => EXIT_IO,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return EXIT_IO;
        }
    }
    1
}

#[derive(Debug, Parser)]
#[command(name = "unside", version, about = "Dirichlet-path simplex denoising toolkit")]
pub struct Cli {
    /// Random seed (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` config file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Voronoi-probability curves, one CSV per (a, K).
    Calibrate(CalibrateArgs),
    /// Forward-noised point clouds for the Dirichlet path and the interpolant.
    NoiseDemo(NoiseDemoArgs),
    /// Train a denoiser or property model; writes a checkpoint and loss CSV.
    Train(TrainArgs),
    /// Draw samples from a checkpoint or the exact posterior of a dataset.
    Sample(SampleArgs),
    /// Graph MMD metrics between generated and reference samples.
    Eval(EvalArgs),
    /// Edge-count guidance experiment on toy graphs.
    GuidanceDemo(GuidanceDemoArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScheduleArgs {
    /// Schedule strength a in alpha(t) = kappa - a ln(1 - t).
    #[arg(long = "a")]
    pub a: Option<f64>,
    /// Prior concentration / schedule offset kappa.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Time clamp: t is capped at 1 - eps_t.
    #[arg(long)]
    pub eps_t: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CalibrateArgs {
    /// Number of categories.
    #[arg(long = "K", alias = "k")]
    pub k: Option<usize>,
    /// Comma-separated schedule strengths.
    #[arg(long = "a")]
    pub a: Option<String>,
    /// Grid points per curve.
    #[arg(long)]
    pub points: Option<usize>,
    /// Prior concentration / schedule offset kappa.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Time clamp: t is capped at 1 - eps_t.
    #[arg(long)]
    pub eps_t: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct NoiseDemoArgs {
    /// Points per cloud.
    #[arg(long)]
    pub points: Option<usize>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// JSON-lines dataset (flat atoms, or graphs with --graph).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Treat the dataset as graphs.
    #[arg(long)]
    pub graph: bool,
    /// Categories per dimension for flat datasets (inferred if omitted).
    #[arg(long = "K", alias = "k")]
    pub k: Option<usize>,
    /// dense, mpnn or property.
    #[arg(long)]
    pub model: Option<String>,
    /// Dense hidden widths, comma-separated.
    #[arg(long)]
    pub hidden: Option<String>,
    /// Message-passing node width.
    #[arg(long)]
    pub d_h: Option<usize>,
    /// Message-passing rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Node vs edge loss weight in [0, 1].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Optimiser steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Examples per step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// sgd or momentum.
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Momentum coefficient.
    #[arg(long)]
    pub momentum: Option<f64>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SampleArgs {
    /// Denoiser checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Use the exact posterior of --dataset instead of a checkpoint.
    #[arg(long)]
    pub exact_posterior: bool,
    /// Flat or graph dataset (exact posterior, priors).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Treat datasets as graphs.
    #[arg(long)]
    pub graph: bool,
    /// Categories per dimension for flat datasets.
    #[arg(long = "K", alias = "k")]
    pub k: Option<usize>,
    /// Number of samples.
    #[arg(long)]
    pub count: Option<usize>,
    /// Number of function evaluations T.
    #[arg(long)]
    pub nfe: Option<usize>,
    /// Corrector steps after each denoising step.
    #[arg(long)]
    pub correctors: Option<usize>,
    /// sample or argmax.
    #[arg(long)]
    pub decode: Option<String>,
    /// none, classifier-free or classifier.
    #[arg(long)]
    pub guidance: Option<String>,
    /// Guidance strength.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Conditional denoiser checkpoint (classifier-free).
    #[arg(long)]
    pub conditional: Option<PathBuf>,
    /// Conditional dataset for an exact conditional posterior.
    #[arg(long)]
    pub conditional_dataset: Option<PathBuf>,
    /// Property model checkpoint (classifier guidance).
    #[arg(long)]
    pub property: Option<PathBuf>,
    /// Target class for classifier guidance.
    #[arg(long)]
    pub target: Option<usize>,
    /// Record nearest-vertex decodings after every step.
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    /// Generated graphs (JSON lines).
    #[arg(long)]
    pub generated: Option<PathBuf>,
    /// Reference graphs (JSON lines).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Split the generated file into this many runs.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Permutations for the null distribution.
    #[arg(long)]
    pub permutations: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GuidanceDemoArgs {
    /// Nodes per graph.
    #[arg(long)]
    pub n: Option<usize>,
    /// Graphs in the training set.
    #[arg(long)]
    pub graphs: Option<usize>,
    /// Erdős–Rényi edge probability.
    #[arg(long)]
    pub p: Option<f64>,
    /// Guidance strength.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Target edge count.
    #[arg(long)]
    pub target: Option<usize>,
    /// Samples per run.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Number of function evaluations T.
    #[arg(long)]
    pub nfe: Option<usize>,
    /// Comma-separated sampling seeds.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Property model training steps.
    #[arg(long)]
    pub property_steps: Option<usize>,
}
