//! Model comparison by Pareto-smoothed importance-sampling leave-one-out
//! cross-validation over per-character pointwise log-likelihoods.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FamilyData, ModelSpec, Posterior};
use crate::real::log_sum_exp;
use crate::sampler::PosteriorDraws;

/// Pareto k above which the importance-sampling estimate is unreliable.
pub const HIGH_K: f64 = 0.7;

/// `S` draws by `N` observations of pointwise log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseMatrix {
    pub model: String,
    pub obs: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl PointwiseMatrix {
    pub fn new(model: impl Into<String>, obs: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in values.iter().enumerate() {
            if row.len() != obs.len() {
                return Err(Error::Dimension { expected: obs.len(), actual: row.len(), context: "pointwise row" });
            }
            if let Some(i) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Config(format!("non-finite log-likelihood at draw {s}, observation {}", obs[i])));
            }
        }
        Ok(PointwiseMatrix { model: model.into(), obs, values })
    }

    pub fn n_draws(&self) -> usize {
        self.values.len()
    }

    pub fn n_obs(&self) -> usize {
        self.obs.len()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[i]).collect()
    }

    /// Long format: `draw,obs,loglik`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["draw", "obs", "loglik"])?;
        for (s, row) in self.values.iter().enumerate() {
            for (name, v) in self.obs.iter().zip(row) {
                w.write_record([s.to_string(), name.clone(), v.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<pointwise>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Reads the long format; observations keep their order of first appearance.
    pub fn read_csv(path: &Path, model: impl Into<String>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["draw", "obs", "loglik"] {
            return Err(Error::parse(path.display().to_string(), "expected header draw,obs,loglik"));
        }
        let mut obs: Vec<String> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut cells: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::parse(path.display().to_string(), format!("row {}: invalid {what}", line + 2));
            let draw: usize = rec[0].parse().map_err(|_| bad("draw"))?;
            let v: f64 = rec[2].parse().map_err(|_| bad("loglik"))?;
            let i = *index.entry(rec[1].to_owned()).or_insert_with(|| {
                obs.push(rec[1].to_owned());
                obs.len() - 1
            });
            let row = cells.entry(draw).or_default();
            if row.len() <= i {
                row.resize(i + 1, None);
            }
            row[i] = Some(v);
        }
        let n = obs.len();
        let mut values = Vec::with_capacity(cells.len());
        for (draw, row) in cells {
            let complete: Option<Vec<f64>> = (0..n).map(|i| row.get(i).copied().flatten()).collect();
            values.push(complete.ok_or_else(|| Error::parse(path.display().to_string(), format!("draw {draw} is missing observations")))?);
        }
        PointwiseMatrix::new(model, obs, values)
    }
}

/// Pointwise log-likelihood of each posterior draw, evaluated on the tree the
/// draw was sampled under. Observations are the characters of the family.
pub fn pointwise_from_draws(
    model: impl Into<String>,
    spec: &ModelSpec,
    per_tree: &[FamilyData<f64>],
    draws: &PosteriorDraws,
) -> Result<PointwiseMatrix> {
    let first = per_tree.first().ok_or(Error::EmptyDraws)?;
    let posteriors = per_tree.iter().map(|d| Posterior::new(spec, d)).collect::<Result<Vec<_>>>()?;
    if let Some(&t) = draws.tree.iter().find(|&&t| t >= per_tree.len()) {
        return Err(Error::Config(format!("draw references tree {t}, only {} available", per_tree.len())));
    }
    let values: Vec<Vec<f64>> = draws
        .values
        .par_iter()
        .zip(draws.tree.par_iter())
        .map(|(row, &t)| posteriors[t].pointwise(&spec.unconstrain_values(row)))
        .collect();
    PointwiseMatrix::new(model, first.character_ids.clone(), values)
}

/// Zhang and Stephens' profile estimate of the generalised Pareto
/// distribution `(k, sigma)` for exceedances `x` (ascending), with the
/// weakly informative shrinkage of `k` towards 0.5.
pub fn gpd_fit(x: &[f64]) -> (f64, f64) {
    let n = x.len();
    let nf = n as f64;
    let prior = 3.0;
    let m = 30 + (nf.sqrt()) as usize;
    let xstar = x[((nf / 4.0 + 0.5).floor() as usize).max(1) - 1];
    let x_max = x[n - 1];
    let theta: Vec<f64> =
        (1..=m).map(|j| 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / prior / xstar).collect();
    let profile: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let b = -t;
            let k = x.iter().map(|&v| (b * v).ln_1p()).sum::<f64>() / nf;
            nf * ((b / k).ln() - k - 1.0)
        })
        .collect();
    let norm = log_sum_exp(&profile);
    let theta_hat: f64 = theta.iter().zip(&profile).map(|(t, l)| t * (l - norm).exp()).sum();
    let k = x.iter().map(|&v| (-theta_hat * v).ln_1p()).sum::<f64>() / nf;
    let sigma = -k / theta_hat;
    let k = (k * nf + 5.0) / (nf + 10.0);
    (k, sigma)
}

/// Quantile function of the generalised Pareto distribution.
pub fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * (-k * (-p).ln_1p()).exp_m1() / k
    }
}

/// Pareto-smoothed log weights (normalised) and the tail shape estimate.
/// `k` is `NaN` when the tail is flat.
pub fn psis_smooth(log_ratios: &[f64]) -> Result<(Vec<f64>, f64)> {
    let s = log_ratios.len();
    let sf = s as f64;
    let tail = (0.2 * sf).min(3.0 * sf.sqrt()).ceil() as usize;
    if tail < 5 || tail >= s {
        return Err(Error::ShortTail { obs: 0, tail });
    }
    let max = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lw: Vec<f64> = log_ratios.iter().map(|v| v - max).collect();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| lw[a].total_cmp(&lw[b]));
    let tail_ids = &order[s - tail..];
    let cutoff = lw[order[s - tail - 1]];
    let k = if tail_ids.iter().all(|&i| lw[i] == lw[tail_ids[0]]) {
        f64::NAN
    } else {
        let exp_cutoff = cutoff.exp();
        let x: Vec<f64> = tail_ids.iter().map(|&i| lw[i].exp() - exp_cutoff).collect();
        let (k, sigma) = gpd_fit(&x);
        if k.is_finite() && sigma.is_finite() && sigma > 0.0 {
            for (r, &i) in tail_ids.iter().enumerate() {
                let p = (r as f64 + 0.5) / tail as f64;
                lw[i] = (gpd_quantile(p, k, sigma) + exp_cutoff).ln();
            }
        }
        k
    };
    for v in lw.iter_mut() {
        if *v > 0.0 {
            *v = 0.0;
        }
    }
    let norm = log_sum_exp(&lw);
    for v in lw.iter_mut() {
        *v -= norm;
    }
    Ok((lw, k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub model: String,
    pub elpd_loo: f64,
    pub se: f64,
    pub p_loo: f64,
    pub lppd: f64,
    pub obs: Vec<String>,
    pub pointwise: Vec<f64>,
    pub pareto_k: Vec<f64>,
}

impl LooResult {
    pub fn n_high_k(&self) -> usize {
        self.pareto_k.iter().filter(|&&k| k > HIGH_K).count()
    }

    pub fn report(&self) -> LooReport {
        LooReport { model: self.model.clone(), elpd: self.elpd_loo, se: self.se, n_high_k: self.n_high_k() }
    }
}

/// Compact output record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub model: String,
    pub elpd: f64,
    pub se: f64,
    pub n_high_k: usize,
}

fn standard_error(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (n * var).sqrt()
}

pub fn psis_loo(pw: &PointwiseMatrix) -> Result<LooResult> {
    let s = pw.n_draws();
    if s < 100 {
        log::warn!("PSIS-LOO with only {s} draws; at least 100 are recommended");
    }
    let per_obs: Vec<Result<(f64, f64, f64)>> = (0..pw.n_obs())
        .into_par_iter()
        .map(|i| {
            let ll = pw.column(i);
            let lppd = log_sum_exp(&ll) - (s as f64).ln();
            let neg: Vec<f64> = ll.iter().map(|v| -v).collect();
            let (lw, k) = psis_smooth(&neg).map_err(|e| match e {
                Error::ShortTail { tail, .. } => Error::ShortTail { obs: i, tail },
                other => other,
            })?;
            let terms: Vec<f64> = lw.iter().zip(&ll).map(|(w, l)| w + l).collect();
            Ok((log_sum_exp(&terms), k, lppd))
        })
        .collect();
    let mut pointwise = Vec::with_capacity(pw.n_obs());
    let mut pareto_k = Vec::with_capacity(pw.n_obs());
    let mut lppd = 0.0;
    for r in per_obs {
        let (e, k, l) = r?;
        pointwise.push(e);
        pareto_k.push(k);
        lppd += l;
    }
    let n_high = pareto_k.iter().filter(|&&k| k > HIGH_K).count();
    if n_high > 0 {
        log::warn!("{}: {n_high} observations with Pareto k > {HIGH_K}", pw.model);
    }
    let elpd_loo: f64 = pointwise.iter().sum();
    Ok(LooResult {
        model: pw.model.clone(),
        elpd_loo,
        se: standard_error(&pointwise),
        p_loo: lppd - elpd_loo,
        lppd,
        obs: pw.obs.clone(),
        pointwise,
        pareto_k,
    })
}

/// `elpd(a) - elpd(b)` and the standard error of the paired difference.
pub fn elpd_diff(a: &LooResult, b: &LooResult) -> Result<(f64, f64)> {
    if a.obs != b.obs {
        return Err(Error::ObservationMismatch(format!("`{}` has {} observations, `{}` has {}", a.model, a.obs.len(), b.model, b.obs.len())));
    }
    let d: Vec<f64> = a.pointwise.iter().zip(&b.pointwise).map(|(x, y)| x - y).collect();
    Ok((d.iter().sum(), standard_error(&d)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub elpd: f64,
    pub se: f64,
    pub elpd_diff: f64,
    pub se_diff: f64,
    pub n_high_k: usize,
}

/// Models ordered by decreasing elpd, with differences relative to the best.
pub fn compare(models: &[LooResult]) -> Result<Vec<ComparisonRow>> {
    let best = models
        .iter()
        .max_by(|a, b| a.elpd_loo.total_cmp(&b.elpd_loo))
        .ok_or_else(|| Error::ObservationMismatch("no models to compare".into()))?;
    let mut rows = models
        .iter()
        .map(|m| {
            let (d, se) = elpd_diff(m, best)?;
            Ok(ComparisonRow { model: m.model.clone(), elpd: m.elpd_loo, se: m.se, elpd_diff: d, se_diff: se, n_high_k: m.n_high_k() })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.elpd.total_cmp(&a.elpd));
    Ok(rows)
}

impl ComparisonRow {
    /// `elpd_diff (se_diff)` with two decimals, e.g. `-26.67 (11.80)`.
    pub fn formatted(&self) -> String {
        format!("{:.2} ({:.2})", self.elpd_diff, self.se_diff)
    }
}

/// Comparison table with an extra `report` column holding [`ComparisonRow::formatted`].
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model", "elpd", "se", "elpd_diff", "se_diff", "n_high_k", "report"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.elpd.to_string(),
            r.se.to_string(),
            r.elpd_diff.to_string(),
            r.se_diff.to_string(),
            r.n_high_k.to_string(),
            r.formatted(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<comparison>", e))?;
    Ok(())
}
