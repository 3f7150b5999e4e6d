use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use repsim::{Regularization, Strategy};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "repsim", version, about = "SVCCA similarity analysis over multilingual activation datasets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "subcommand")]
pub enum Command {
    /// Mean-pool a token-level dataset into a sentence-level one
    Pool(PoolArgs),
    /// SVCCA between two languages at one layer
    Score(ScoreArgs),
    /// Pairwise similarity matrix over all languages at one layer
    Pairwise(PairwiseArgs),
    /// Per-layer distribution of pairwise scores
    Dist(DistArgs),
    /// Nearest neighbors of each language
    Neighbors(NeighborsArgs),
    /// Laplacian-eigenmap coordinates of the languages
    Embed(EmbedArgs),
    /// Per-language drift between two snapshots
    Drift(DriftArgs),
    /// Generate a synthetic dataset with planted language families
    Synth(SynthArgs),
    /// Add per-language Gaussian noise to a dataset
    Perturb(PerturbArgs),
    /// Rerun a command from its run-metadata file
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SvccaArgs {
    #[arg(long, default_value = "mean_pool", value_parser = parse_strategy)]
    pub strategy: Strategy,
    /// Fraction of variance kept by the SVD step, in (0, 1]
    #[arg(long, default_value_t = 0.99, value_parser = parse_tau)]
    pub tau: f64,
    /// CCA ridge: `auto` or a non-negative number
    #[arg(long, default_value = "auto", value_parser = parse_epsilon)]
    pub epsilon: Regularization,
}

impl SvccaArgs {
    pub fn options(&self) -> repsim::SvccaOptions {
        repsim::SvccaOptions {
            tau: self.tau,
            regularization: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Output file; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PoolArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated layers; all when omitted
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<String>,
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ScoreArgs {
    /// One manifest, or two to compare across datasets
    #[arg(long, required = true, num_args = 1, action = clap::ArgAction::Append)]
    pub manifest: Vec<PathBuf>,
    #[arg(long)]
    pub layer: String,
    /// One language (compared with itself) or two
    #[arg(long, required = true, num_args = 1, action = clap::ArgAction::Append)]
    pub language: Vec<String>,
    #[command(flatten)]
    pub svcca: SvccaArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PairwiseArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub layer: String,
    #[command(flatten)]
    pub svcca: SvccaArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DistArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated layers; all when omitted
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<String>,
    #[command(flatten)]
    pub svcca: SvccaArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Where a similarity matrix comes from: a saved one, or computed from a dataset.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimilaritySource {
    /// Similarity matrix written by `pairwise` (CSV, or JSON by extension)
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub similarity: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, required_unless_present = "similarity")]
    pub layer: Option<String>,
    #[command(flatten)]
    pub svcca: SvccaArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct NeighborsArgs {
    #[command(flatten)]
    pub source: SimilaritySource,
    /// Only this language; all when omitted
    #[arg(long)]
    pub language: Option<String>,
    /// Neighbors per language; all others when omitted
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub source: SimilaritySource,
    /// Keep each language's k strongest edges; dense when omitted
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub knn: Option<u64>,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DriftArgs {
    /// Snapshot before, then snapshot after
    #[arg(long, required = true, num_args = 1, action = clap::ArgAction::Append)]
    pub manifest: Vec<PathBuf>,
    #[arg(long)]
    pub layer: String,
    /// CSV with header `language,value`
    #[arg(long)]
    pub metric: Option<PathBuf>,
    #[command(flatten)]
    pub svcca: SvccaArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    /// Full spec as JSON; replaces the shape flags below
    #[arg(long, conflicts_with_all = ["families", "per_family", "n", "d", "d_latent", "alpha", "beta", "sigma", "seed", "layer"])]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub families: usize,
    #[arg(long, default_value_t = 4)]
    pub per_family: usize,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    #[arg(long, default_value_t = 8)]
    pub d_latent: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.2)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = repsim::synth::DEFAULT_LAYER)]
    pub layer: String,
    /// Build a layer stack with these shared-signal fractions instead
    #[arg(long, value_delimiter = ',')]
    pub shared_fractions: Vec<f64>,
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PerturbArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// `LANG=SIGMA`, repeatable
    #[arg(long = "level", value_parser = parse_level)]
    pub levels: Vec<(String, f64)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A `.meta.json` written next to an earlier output
    pub meta: PathBuf,
    /// Write to this path instead of the recorded one
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_tau(s: &str) -> Result<f64, String> {
    let tau: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if tau > 0.0 && tau <= 1.0 {
        Ok(tau)
    } else {
        Err(format!("tau must be in (0, 1], got {s}"))
    }
}

fn parse_epsilon(s: &str) -> Result<Regularization, String> {
    let reg: Regularization = s.parse().map_err(|e: repsim::Error| e.to_string())?;
    reg.validate().map_err(|e| e.to_string())?;
    Ok(reg)
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: repsim::Error| e.to_string())
}

fn parse_level(s: &str) -> Result<(String, f64), String> {
    let (lang, sigma) = s.split_once('=').ok_or_else(|| format!("expected LANG=SIGMA, got `{s}`"))?;
    let sigma: f64 = sigma.parse().map_err(|_| format!("`{sigma}` is not a number"))?;
    Ok((lang.to_string(), sigma))
}
