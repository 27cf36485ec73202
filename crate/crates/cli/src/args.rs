use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "bof",
    version,
    about = "Bag-of-frames soundscape retrieval benchmark"
)]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode a manifest and write one MFCC sequence per item.
    Extract(ExtractArgs),
    /// Fit one Gaussian mixture per extracted feature sequence.
    Fit(FitArgs),
    /// Compute the pairwise distance matrix.
    Distances(DistanceArgs),
    /// Score a distance matrix by nearest-neighbour retrieval.
    Evaluate(EvaluateArgs),
    /// Run the whole pipeline from a manifest.
    Run(RunArgs),
    /// Paired comparison of two evaluation reports.
    Compare(CompareArgs),
    /// Report recording and location structure per class.
    Audit(AuditArgs),
}

/// Options shared with the `key = value` config file. Flags override the
/// file.
#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// `whole` or `segmented:<seconds>`.
    #[arg(long)]
    pub unit_policy: Option<String>,
    /// Peak-normalize audio before feature extraction.
    #[arg(long, value_name = "BOOL")]
    pub normalize: Option<bool>,
    /// Keep MFCC coefficient 0.
    #[arg(long, value_name = "BOOL")]
    pub include_c0: Option<bool>,
    /// `bof_mc`, `bof_marginal` or `average`.
    #[arg(long)]
    pub method: Option<String>,
    /// Mixture components per item.
    #[arg(long, short = 'm')]
    pub components: Option<usize>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chance_trials: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

impl ConfigArgs {
    /// Flag values as config-file pairs, in a fixed order.
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        [
            ("manifest", path(&self.manifest)),
            ("unit_policy", self.unit_policy.clone()),
            ("normalize", self.normalize.map(|b| b.to_string())),
            ("include_c0", self.include_c0.map(|b| b.to_string())),
            ("method", self.method.clone()),
            ("components", self.components.map(|v| v.to_string())),
            ("mc_samples", self.mc_samples.map(|v| v.to_string())),
            ("rng_seed", self.seed.map(|v| v.to_string())),
            ("chance_trials", self.chance_trials.map(|v| v.to_string())),
            ("output_dir", path(&self.output_dir)),
            ("cache_dir", path(&self.cache_dir)),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory for feature files and the index.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write each sequence as CSV.
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Directory written by `extract`.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, short = 'm', default_value_t = bof_core::bof_model::DEFAULT_COMPONENTS)]
    pub components: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistanceArgs {
    #[arg(long)]
    pub method: String,
    /// Directory written by `extract` (needed by `average` and `bof_marginal`).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Directory written by `fit` (needed by `bof_mc` and `bof_marginal`).
    #[arg(long)]
    pub models: Option<PathBuf>,
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// File written by `distances`.
    #[arg(long)]
    pub distances: PathBuf,
    #[arg(long, default_value_t = bof_core::eval::DEFAULT_CHANCE_TRIALS)]
    pub chance_trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for the JSON report and text table.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Print the JSON report instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, default_value_t = bof_core::compare::DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "whole")]
    pub unit_policy: String,
    #[arg(long)]
    pub json: bool,
}
