//! `colexphylo`: ingest wordlists, fit the phylogenetic models, compare them
//! with PSIS-LOO, run the simulation study and the count-regression baseline.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "colexphylo", version, about = "Bayesian phylogenetic models of colexification")]
struct Cli {
    /// JSON file with flat keys; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build trait-matrix and predictor CSVs from wordlist-style inputs.
    Ingest(IngestArgs),
    /// Fit one model variant on every selected tree and pool the draws.
    Fit(FitArgs),
    /// PSIS-LOO for two or more pointwise log-likelihood files.
    Compare(CompareArgs),
    /// Simulation-based validation of coefficient recovery.
    Validate(ValidateArgs),
    /// Negative binomial regression of colexification counts.
    Negbin(NegbinArgs),
    /// Posterior summaries of a draws CSV.
    Summary(SummaryArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV with `glottocode,variety,concept_id,form`.
    #[arg(long)]
    pub wordlist: Option<PathBuf>,
    /// Optional CSV with `concept_a,concept_b`; by default every pair colexified somewhere.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// CSV with `resource_lang,concept_id,form`.
    #[arg(long)]
    pub concept_forms: Option<PathBuf>,
    /// CSV with `resource_lang,form_a,form_b,score`.
    #[arg(long)]
    pub associations: Option<PathBuf>,
    /// CSV with `resource_lang,form,count,corpus_size`.
    #[arg(long)]
    pub frequencies: Option<PathBuf>,
    /// CSV with `concept_id,score`.
    #[arg(long)]
    pub borrowability: Option<PathBuf>,
    /// Resource languages to average over (default: all in the concept-form map).
    #[arg(long, value_delimiter = ',')]
    pub resource_langs: Option<Vec<String>>,
    #[arg(long)]
    pub min_colex: Option<usize>,
    #[arg(long)]
    pub min_attested: Option<usize>,
    /// Concept blocklist, one id per line (default: the bundled list).
    #[arg(long)]
    pub blocklist: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct SamplerArgs {
    #[arg(long)]
    pub chains: Option<usize>,
    /// Iterations per chain, warmup included.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    #[arg(long)]
    pub target_accept: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub init_radius: Option<f64>,
    /// 3 chains x 4000 iterations instead of the 1000-iteration desk default.
    #[arg(long)]
    pub full_scale: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Newick file, one tree per line (or `;`-separated).
    #[arg(long)]
    pub trees: Option<PathBuf>,
    #[arg(long)]
    pub traits: Option<PathBuf>,
    #[arg(long)]
    pub predictors: Option<PathBuf>,
    /// full, stationary-only, speed-only or null.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    /// Comma-separated tree indices (0-based).
    #[arg(long, value_delimiter = ',', conflicts_with = "max_trees")]
    pub tree_indices: Option<Vec<usize>>,
    /// Use only the first N trees.
    #[arg(long)]
    pub max_trees: Option<usize>,
    /// z-score predictors before fitting; the transform is written to the summary.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `NAME=PATH` or `PATH` (named after the file, or its directory for `pointwise.csv`).
    #[arg(long = "pointwise", num_args = 1)]
    pub pointwise: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Master seed; replicate i uses seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated sizes: SMALL, MEDIUM, LARGE.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<String>>,
    /// Seeds per size; each seed runs all four activation patterns.
    #[arg(long)]
    pub n_seeds: Option<usize>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NegbinArgs {
    /// Trait matrix; counts are the number of `1` cells per pair.
    #[arg(long)]
    pub traits: Option<PathBuf>,
    #[arg(long)]
    pub predictors: Option<PathBuf>,
    /// Fit the intercept alone.
    #[arg(long)]
    pub intercept_only: bool,
    /// Hold the dispersion fixed instead of estimating it.
    #[arg(long)]
    pub fixed_theta: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummaryArgs {
    #[arg(long)]
    pub draws: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
