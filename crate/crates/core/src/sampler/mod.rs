//! No-U-Turn Hamiltonian Monte Carlo over the model's free parameters, with
//! multi-chain execution, pooling across a sample of trees, and posterior
//! summaries.

pub mod diagnostics;
mod nuts;

use std::io::Write;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FamilyData, ModelSpec, Posterior};

pub use nuts::{ChainOutput, Transition};

/// A differentiable log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Log density at `x`, writing the gradient into `grad`. Non-finite values
    /// mark points outside the support.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }

    /// Reported values for an unconstrained point.
    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn initial_point(&self, rng: &mut dyn RngCore, radius: f64) -> Vec<f64> {
        (0..self.dim()).map(|_| radius * (2.0 * rng.random::<f64>() - 1.0)).collect()
    }
}

impl LogDensity for Posterior<'_, f64> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        Posterior::log_density_grad(self, x, grad)
    }

    fn param_names(&self) -> Vec<String> {
        self.spec.param_names()
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        self.spec.constrain(x)
    }

    fn initial_point(&self, rng: &mut dyn RngCore, radius: f64) -> Vec<f64> {
        self.spec.initial_point(&mut || rng.random::<f64>(), radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Iterations per chain, warmup included.
    pub n_iterations: usize,
    pub warmup_fraction: f64,
    pub target_accept: f64,
    pub max_depth: usize,
    pub seed: u64,
    /// Indices into the tree sample; `None` runs every tree.
    pub trees: Option<Vec<usize>>,
    pub init_radius: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 3,
            n_iterations: 4000,
            warmup_fraction: 0.5,
            target_accept: 0.8,
            max_depth: 10,
            seed: 0,
            trees: None,
            init_radius: 0.1,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(seed: u64) -> Self {
        SamplerConfig { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be positive".into()));
        }
        if self.n_iterations == 0 || self.n_iterations % 2 != 0 {
            return Err(Error::Config(format!("n_iterations must be a positive even number, got {}", self.n_iterations)));
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::Config(format!("warmup fraction must lie in (0, 1), got {}", self.warmup_fraction)));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!("target acceptance must lie in (0, 1), got {}", self.target_accept)));
        }
        if self.max_depth == 0 {
            return Err(Error::Config("max tree depth must be positive".into()));
        }
        if self.init_radius.is_nan() || self.init_radius < 0.0 {
            return Err(Error::Config("initialization radius must be non-negative".into()));
        }
        Ok(())
    }

    pub fn n_warmup(&self) -> usize {
        (self.n_iterations as f64 * self.warmup_fraction).round() as usize
    }

    pub fn n_retained(&self) -> usize {
        self.n_iterations - self.n_warmup()
    }
}

/// Pooled posterior draws, one row per retained iteration, values on the
/// reported scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub chain: Vec<usize>,
    pub tree: Vec<usize>,
    pub iteration: Vec<usize>,
    pub divergent: Vec<bool>,
    pub accept_stat: Vec<f64>,
    pub max_depth_hits: usize,
}

impl PosteriorDraws {
    fn empty(names: Vec<String>) -> Self {
        PosteriorDraws {
            names,
            values: Vec::new(),
            chain: Vec::new(),
            tree: Vec::new(),
            iteration: Vec::new(),
            divergent: Vec::new(),
            accept_stat: Vec::new(),
            max_depth_hits: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_divergent(&self) -> usize {
        self.divergent.iter().filter(|&&d| d).count()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    /// Draws of parameter `j` grouped by (tree, chain), in order of first appearance.
    pub fn chains(&self, j: usize) -> Vec<Vec<f64>> {
        let mut keys: Vec<(usize, usize)> = Vec::new();
        let mut out: Vec<Vec<f64>> = Vec::new();
        for (i, row) in self.values.iter().enumerate() {
            let key = (self.tree[i], self.chain[i]);
            let slot = match keys.iter().position(|k| *k == key) {
                Some(s) => s,
                None => {
                    keys.push(key);
                    out.push(Vec::new());
                    keys.len() - 1
                }
            };
            out[slot].push(row[j]);
        }
        out
    }

    fn append(&mut self, other: PosteriorDraws) {
        self.values.extend(other.values);
        self.chain.extend(other.chain);
        self.tree.extend(other.tree);
        self.iteration.extend(other.iteration);
        self.divergent.extend(other.divergent);
        self.accept_stat.extend(other.accept_stat);
        self.max_depth_hits += other.max_depth_hits;
    }

    /// Restricts to the draws of one tree.
    pub fn for_tree(&self, tree: usize) -> PosteriorDraws {
        let mut out = PosteriorDraws::empty(self.names.clone());
        for i in (0..self.len()).filter(|&i| self.tree[i] == tree) {
            out.values.push(self.values[i].clone());
            out.chain.push(self.chain[i]);
            out.tree.push(tree);
            out.iteration.push(self.iteration[i]);
            out.divergent.push(self.divergent[i]);
            out.accept_stat.push(self.accept_stat[i]);
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["chain".to_owned(), "tree".to_owned(), "iteration".to_owned()];
        header.extend(self.names.iter().cloned());
        header.push("divergent".to_owned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.chain[i].to_string(), self.tree[i].to_string(), self.iteration[i].to_string()];
            rec.extend(self.values[i].iter().map(|v| v.to_string()));
            rec.push(u8::from(self.divergent[i]).to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<draws>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let n = header.len();
        if n < 4 || &header[0] != "chain" || &header[1] != "tree" || &header[2] != "iteration" || &header[n - 1] != "divergent" {
            return Err(Error::parse(path.display().to_string(), "expected header chain,tree,iteration,<params>,divergent"));
        }
        let mut out = PosteriorDraws::empty(header.iter().skip(3).take(n - 4).map(str::to_owned).collect());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::parse(path.display().to_string(), format!("row {}: invalid {what}", line + 2));
            out.chain.push(rec[0].parse().map_err(|_| bad("chain"))?);
            out.tree.push(rec[1].parse().map_err(|_| bad("tree"))?);
            out.iteration.push(rec[2].parse().map_err(|_| bad("iteration"))?);
            let row = (3..n - 1).map(|j| rec[j].parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad("value"))?;
            out.values.push(row);
            out.divergent.push(match &rec[n - 1] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("divergent flag")),
            });
            out.accept_stat.push(f64::NAN);
        }
        Ok(out)
    }
}

fn chain_rng(seed: u64, tree: usize, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((tree as u64) << 32) | chain as u64);
    rng
}

/// Runs `config.n_chains` chains on one target. Draws are tagged with `tree_id`.
pub fn nuts_sample_tree<D: LogDensity + ?Sized>(target: &D, config: &SamplerConfig, tree_id: usize) -> Result<PosteriorDraws> {
    config.validate()?;
    let settings = nuts::ChainSettings {
        warmup: config.n_warmup(),
        samples: config.n_retained(),
        target_accept: config.target_accept,
        max_depth: config.max_depth,
        init_radius: config.init_radius,
    };
    let outputs: Vec<Result<ChainOutput>> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| nuts::run_chain(target, &settings, &mut chain_rng(config.seed, tree_id, c)))
        .collect();

    let mut draws = PosteriorDraws::empty(target.param_names());
    for (c, out) in outputs.into_iter().enumerate() {
        let out = out?;
        if out.max_depth_hits > 0 {
            log::warn!("tree {tree_id} chain {c}: {} transitions hit the maximum tree depth", out.max_depth_hits);
        }
        draws.max_depth_hits += out.max_depth_hits;
        for (i, (q, t)) in out.draws.iter().zip(&out.transitions).enumerate() {
            draws.values.push(target.constrain(q));
            draws.chain.push(c);
            draws.tree.push(tree_id);
            draws.iteration.push(i);
            draws.divergent.push(t.divergent);
            draws.accept_stat.push(t.accept_stat);
        }
    }
    Ok(draws)
}

/// Multi-chain NUTS on a single target.
pub fn nuts_sample<D: LogDensity + ?Sized>(target: &D, config: &SamplerConfig) -> Result<PosteriorDraws> {
    nuts_sample_tree(target, config, 0)
}

/// Independent runs on each tree of a family, pooled in tree order.
pub fn run_family(spec: &ModelSpec, per_tree: &[FamilyData<f64>], config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let indices: Vec<usize> = match &config.trees {
        Some(ix) => ix.clone(),
        None => (0..per_tree.len()).collect(),
    };
    if indices.is_empty() {
        return Err(Error::EmptyDraws);
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= per_tree.len()) {
        return Err(Error::Config(format!("tree index {bad} out of range for {} trees", per_tree.len())));
    }
    let runs: Vec<Result<PosteriorDraws>> = indices
        .par_iter()
        .map(|&t| {
            let posterior = Posterior::new(spec, &per_tree[t])?;
            nuts_sample_tree(&posterior, config, t).map_err(|e| Error::TreeRun { tree: t, source: Box::new(e) })
        })
        .collect();
    let mut pooled = PosteriorDraws::empty(spec.param_names());
    for run in runs {
        pooled.append(run?);
    }
    Ok(pooled)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub param: String,
    pub median: f64,
    pub eti_low: f64,
    pub eti_high: f64,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub n_divergent: usize,
}

/// Median, 95% equal-tailed interval, split R-hat and bulk ESS per parameter.
/// Chains are the (tree, chain) groups.
pub fn summarize(draws: &PosteriorDraws) -> Result<Vec<ParamSummary>> {
    if draws.len() < 4 {
        return Err(Error::EmptyDraws);
    }
    Ok((0..draws.names.len())
        .map(|j| {
            let (median, eti_low, eti_high) = diagnostics::equal_tailed_interval(&draws.column(j), 0.95);
            let chains = draws.chains(j);
            let refs: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
            ParamSummary {
                param: draws.names[j].clone(),
                median,
                eti_low,
                eti_high,
                rhat: diagnostics::split_rhat(&refs),
                ess: diagnostics::ess_bulk(&refs),
            }
        })
        .collect())
}

pub fn diagnose(summary: &[ParamSummary], draws: &PosteriorDraws) -> Diagnostics {
    Diagnostics {
        rhat: summary.iter().map(|s| s.rhat).collect(),
        ess: summary.iter().map(|s| s.ess).collect(),
        n_divergent: draws.n_divergent(),
    }
}

/// Largest R-hat, ignoring undefined values.
pub fn max_rhat(summary: &[ParamSummary]) -> f64 {
    summary.iter().map(|s| s.rhat).filter(|r| r.is_finite()).fold(f64::NEG_INFINITY, f64::max)
}
