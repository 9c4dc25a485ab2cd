//! Simulation-based validation: draw effects and intercepts, simulate traits
//! on a coalescent tree, refit the full model and classify how well the
//! predictor coefficients were recovered.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ctmc::{simulate_history_with, RateParams, RootState};
use crate::data::{PredictorTable, TraitMatrix};
use crate::error::{Error, Result};
use crate::likelihood::TraitState;
use crate::model::{link_params, CoefficientSet, Component, FamilyData, ModelSpec, Posterior, Variant};
use crate::sampler::{max_rhat, nuts_sample, summarize, ParamSummary, PosteriorDraws, SamplerConfig};
use crate::trees::{simulate_coalescent_with, PhyloTree};

/// R-hat above which a fit counts as failed.
pub const RHAT_FAIL: f64 = 1.05;

/// Name of the single synthetic predictor.
pub const PREDICTOR: &str = "x";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SizeLabel {
    Small,
    Medium,
    Large,
}

impl SizeLabel {
    pub const ALL: [SizeLabel; 3] = [SizeLabel::Small, SizeLabel::Medium, SizeLabel::Large];

    /// `(taxa, traits)`
    pub fn dims(self) -> (usize, usize) {
        match self {
            SizeLabel::Small => (35, 85),
            SizeLabel::Medium => (75, 85),
            SizeLabel::Large => (100, 200),
        }
    }
}

impl fmt::Display for SizeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeLabel::Small => "SMALL",
            SizeLabel::Medium => "MEDIUM",
            SizeLabel::Large => "LARGE",
        })
    }
}

impl FromStr for SizeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SMALL" => Ok(SizeLabel::Small),
            "MEDIUM" => Ok(SizeLabel::Medium),
            "LARGE" => Ok(SizeLabel::Large),
            _ => Err(Error::Config(format!("unknown size `{s}` (expected SMALL, MEDIUM or LARGE)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimSetting {
    pub size: SizeLabel,
    pub n_taxa: usize,
    pub n_traits: usize,
    pub s_active: bool,
    pub p_active: bool,
    pub seed: u64,
}

impl SimSetting {
    pub fn new(size: SizeLabel, s_active: bool, p_active: bool, seed: u64) -> Self {
        let (n_taxa, n_traits) = size.dims();
        SimSetting { size, n_taxa, n_traits, s_active, p_active, seed }
    }

    /// The four activation patterns (neither, s only, p only, both) for one seed.
    pub fn patterns(size: SizeLabel, seed: u64) -> [SimSetting; 4] {
        [(false, false), (true, false), (false, true), (true, true)].map(|(s, p)| SimSetting::new(size, s, p, seed))
    }
}

/// Ground-truth coefficients of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub p_intercept: f64,
    pub p_x: f64,
    pub s_intercept: f64,
    pub s_x: f64,
}

impl Truth {
    pub fn coefficients(&self) -> CoefficientSet<f64> {
        CoefficientSet {
            p: Component::Regressed { intercept: self.p_intercept, coefs: vec![self.p_x] },
            s: Component::Regressed { intercept: self.s_intercept, coefs: vec![self.s_x] },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub setting: SimSetting,
    pub tree: PhyloTree<f64>,
    pub x: Vec<f64>,
    pub truth: Truth,
    pub matrix: TraitMatrix,
    pub predictors: PredictorTable,
}

impl Synthetic {
    pub fn family_data(&self) -> Result<FamilyData<f64>> {
        FamilyData::new(&self.tree, &self.matrix, &self.predictors)
    }
}

/// The K = 1 full model fitted to synthetic data.
pub fn synthetic_spec(variant: Variant) -> ModelSpec {
    ModelSpec::new(variant, vec![PREDICTOR.to_owned()])
}

/// Tree, predictor and intercepts depend only on the seed, so the four
/// activation patterns of a seed share them; inactive coefficients are zeroed.
pub fn generate_synthetic(setting: &SimSetting) -> Result<Synthetic> {
    let mut rng = ChaCha8Rng::seed_from_u64(setting.seed);
    let tree = simulate_coalescent_with(setting.n_taxa, &mut rng)?;
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let x: Vec<f64> = (0..setting.n_traits).map(|_| normal()).collect();
    let p_intercept = normal();
    let p_x = normal();
    let s_intercept = normal();
    let s_x = normal();
    let truth = Truth {
        p_intercept,
        p_x: if setting.p_active { p_x } else { 0.0 },
        s_intercept,
        s_x: if setting.s_active { s_x } else { 0.0 },
    };

    let spec = synthetic_spec(Variant::Full);
    let coefs = truth.coefficients();
    let taxa = tree.tip_labels();
    let mut cells = vec![Vec::with_capacity(setting.n_traits); taxa.len()];
    for &xd in &x {
        let rp: RateParams<f64> = link_params(&spec, &coefs, &[xd])?;
        let tips = simulate_history_with(&tree, rp, RootState::Stationary, &mut rng)?;
        for (row, taxon) in cells.iter_mut().zip(&taxa) {
            row.push(TraitState::from_bit(tips[taxon]));
        }
    }
    let ids: Vec<String> = (1..=setting.n_traits).map(|d| format!("trait{d}")).collect();
    let matrix = TraitMatrix::new(taxa, ids.clone(), cells)?;
    let predictors = PredictorTable::new(ids, vec![PREDICTOR.to_owned()], x.iter().map(|&v| vec![v]).collect())?;
    Ok(Synthetic { setting: *setting, tree, x, truth, matrix, predictors })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Recovery {
    T,
    FP,
    FN,
    SE,
}

impl fmt::Display for Recovery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Recovery::T => "T",
            Recovery::FP => "FP",
            Recovery::FN => "FN",
            Recovery::SE => "SE",
        })
    }
}

/// Outcome of comparing a true coefficient with its 95% interval.
pub fn classify_recovery(truth: f64, eti_low: f64, eti_high: f64) -> Result<Recovery> {
    if !(eti_low <= eti_high) {
        return Err(Error::Interval(eti_low, eti_high));
    }
    let covers_zero = eti_low <= 0.0 && 0.0 <= eti_high;
    Ok(match (truth == 0.0, covers_zero) {
        (true, true) => Recovery::T,
        (true, false) => Recovery::FP,
        (false, true) => Recovery::FN,
        (false, false) if (truth > 0.0) == (eti_low > 0.0) => Recovery::T,
        (false, false) => Recovery::SE,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOutcome {
    pub param: String,
    pub truth: f64,
    pub eti_low: f64,
    pub eti_high: f64,
    pub class: Recovery,
}

/// One simulation: setting, truth and either the two outcomes or a failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRun {
    pub setting: SimSetting,
    pub truth: Truth,
    pub max_rhat: f64,
    pub outcomes: Vec<RecoveryOutcome>,
    pub failure: Option<String>,
}

impl SimRun {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    /// File-name friendly label, e.g. `SMALL_seed3_s1_p0`.
    pub fn label(&self) -> String {
        let s = &self.setting;
        format!("{}_seed{}_s{}_p{}", s.size, s.seed, u8::from(s.s_active), u8::from(s.p_active))
    }
}

/// Fits the K = 1 model with one chain and classifies `s_x` and `p_x`.
pub fn run_one(setting: &SimSetting, config: &SamplerConfig) -> Result<SimRun> {
    run_one_with_draws(setting, config).map(|(run, _)| run)
}

/// As [`run_one`], also returning the posterior draws when sampling succeeded.
pub fn run_one_with_draws(setting: &SimSetting, config: &SamplerConfig) -> Result<(SimRun, Option<PosteriorDraws>)> {
    let syn = generate_synthetic(setting)?;
    let spec = synthetic_spec(Variant::Full);
    let data = syn.family_data()?;
    let posterior = Posterior::new(&spec, &data)?;
    let mut cfg = config.clone();
    cfg.n_chains = 1;
    cfg.trees = None;
    let mut run = SimRun { setting: *setting, truth: syn.truth, max_rhat: f64::NAN, outcomes: Vec::new(), failure: None };
    let (draws, summary) = match nuts_sample(&posterior, &cfg).and_then(|d| summarize(&d).map(|s| (d, s))) {
        Ok(x) => x,
        Err(e) => {
            log::warn!("simulation {:?} failed: {e}", setting);
            run.failure = Some(e.to_string());
            return Ok((run, None));
        }
    };
    run.max_rhat = max_rhat(&summary);
    if run.max_rhat > RHAT_FAIL {
        log::warn!("simulation {:?} did not converge (R-hat {:.3})", setting, run.max_rhat);
        run.failure = Some(format!("R-hat {:.3} exceeds {RHAT_FAIL}", run.max_rhat));
        return Ok((run, Some(draws)));
    }
    let find = |name: &str| -> Result<&ParamSummary> {
        summary.iter().find(|s| s.param == name).ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    };
    for (name, truth) in [("s_x", syn.truth.s_x), ("p_x", syn.truth.p_x)] {
        let s = find(name)?;
        run.outcomes.push(RecoveryOutcome {
            param: name.to_owned(),
            truth,
            eti_low: s.eti_low,
            eti_high: s.eti_high,
            class: classify_recovery(truth, s.eti_low, s.eti_high)?,
        });
    }
    Ok((run, Some(draws)))
}

/// Recovery counts for one parameter and size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyRow {
    pub param: String,
    pub size: SizeLabel,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "FP")]
    pub fp: usize,
    #[serde(rename = "FN")]
    pub fn_: usize,
    #[serde(rename = "SE")]
    pub se: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub runs: Vec<SimRun>,
    pub table: Vec<StudyRow>,
    /// Per-run draws, aligned with `runs`; empty unless requested.
    #[serde(skip)]
    pub draws: Vec<Option<PosteriorDraws>>,
}

impl StudyReport {
    pub fn write_table_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.table {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io("<study>", e))?;
        Ok(())
    }
}

pub fn tabulate(runs: &[SimRun], sizes: &[SizeLabel]) -> Vec<StudyRow> {
    let mut table = Vec::new();
    for &size in sizes {
        for param in ["s_x", "p_x"] {
            let mut row = StudyRow { param: param.to_owned(), size, t: 0, fp: 0, fn_: 0, se: 0, failed: 0 };
            for run in runs.iter().filter(|r| r.setting.size == size) {
                if run.failed() {
                    row.failed += 1;
                    continue;
                }
                match run.outcomes.iter().find(|o| o.param == param).map(|o| o.class) {
                    Some(Recovery::T) => row.t += 1,
                    Some(Recovery::FP) => row.fp += 1,
                    Some(Recovery::FN) => row.fn_ += 1,
                    Some(Recovery::SE) => row.se += 1,
                    None => row.failed += 1,
                }
            }
            table.push(row);
        }
    }
    table
}

/// Every size in `sizes` crossed with seeds `master_seed + 0 .. n_seeds` and
/// the four activation patterns. Sampler seeds follow the simulation seed.
pub fn run_study(sizes: &[SizeLabel], n_seeds: usize, master_seed: u64, config: &SamplerConfig) -> Result<StudyReport> {
    run_study_with(sizes, n_seeds, master_seed, config, false)
}

pub fn run_study_with(
    sizes: &[SizeLabel],
    n_seeds: usize,
    master_seed: u64,
    config: &SamplerConfig,
    keep_draws: bool,
) -> Result<StudyReport> {
    config.validate()?;
    let jobs: Vec<SimSetting> = sizes
        .iter()
        .flat_map(|&size| (0..n_seeds as u64).flat_map(move |i| SimSetting::patterns(size, master_seed.wrapping_add(i))))
        .collect();
    let results = jobs
        .par_iter()
        .map(|setting| {
            let cfg = SamplerConfig { seed: setting.seed, ..config.clone() };
            run_one_with_draws(setting, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let (runs, draws): (Vec<SimRun>, Vec<Option<PosteriorDraws>>) = results.into_iter().unzip();
    let table = tabulate(&runs, sizes);
    Ok(StudyReport { runs, table, draws: if keep_draws { draws } else { Vec::new() } })
}
