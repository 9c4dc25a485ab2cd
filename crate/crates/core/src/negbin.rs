//! Negative binomial regression of colexification counts on the predictors:
//! log link, variance `mu + mu^2 / theta`, dispersion by profile maximum
//! likelihood, Wald inference.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::data::PredictorTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CountDataset {
    pub ids: Vec<String>,
    pub names: Vec<String>,
    /// `x[observation][predictor]`
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u64>,
}

impl CountDataset {
    pub fn new(ids: Vec<String>, names: Vec<String>, x: Vec<Vec<f64>>, y: Vec<u64>) -> Result<Self> {
        if x.len() != y.len() || ids.len() != y.len() {
            return Err(Error::Dimension { expected: y.len(), actual: x.len(), context: "count rows" });
        }
        if let Some(row) = x.iter().find(|r| r.len() != names.len()) {
            return Err(Error::Dimension { expected: names.len(), actual: row.len(), context: "count predictors" });
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NegBin("predictors must be finite".into()));
        }
        Ok(CountDataset { ids, names, x, y })
    }

    /// Uses the table's `count` column.
    pub fn from_predictors(table: &PredictorTable) -> Result<Self> {
        let counts = table.counts.clone().ok_or_else(|| Error::NegBin("predictor table has no `count` column".into()))?;
        CountDataset::new(table.ids.clone(), table.names.clone(), table.values.clone(), counts)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn design(&self) -> DMatrix<f64> {
        let k = self.names.len();
        DMatrix::from_fn(self.len(), k + 1, |i, j| if j == 0 { 1.0 } else { self.x[i][j - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegBinOptions {
    /// Holds the dispersion fixed instead of estimating it.
    pub fixed_theta: Option<f64>,
    pub tol: f64,
    pub max_outer: usize,
    pub max_irls: usize,
}

impl Default for NegBinOptions {
    fn default() -> Self {
        NegBinOptions { fixed_theta: None, tol: 1e-8, max_outer: 50, max_irls: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegBinFit {
    /// `"(Intercept)"` followed by the predictor names.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub theta: f64,
    pub theta_se: f64,
    pub log_lik: f64,
    pub aic: f64,
    pub n_obs: usize,
    pub converged: bool,
    pub outer_iterations: usize,
    /// Log-likelihood after each outer iteration.
    pub trace: Vec<f64>,
}

impl NegBinFit {
    pub fn fitted(&self, x: &[f64]) -> f64 {
        linear(&self.coefficients, x).exp()
    }
}

fn linear(beta: &[f64], x: &[f64]) -> f64 {
    beta[0] + beta[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
}

/// `ln Gamma(y + theta) - ln Gamma(theta)`, summed directly for small counts
/// so that huge `theta` keeps full precision.
fn ln_rising(theta: f64, y: u64) -> f64 {
    if y < 10_000 {
        (0..y).map(|j| (theta + j as f64).ln()).sum()
    } else {
        ln_gamma(theta + y as f64) - ln_gamma(theta)
    }
}

fn ln_factorial(y: u64) -> f64 {
    ln_gamma(y as f64 + 1.0)
}

/// Negative binomial log probability with mean `mu` and size `theta`.
pub fn nb_logpmf(y: u64, mu: f64, theta: f64) -> f64 {
    let yf = y as f64;
    let log_mu_part = if y == 0 { 0.0 } else { yf * (mu.ln() - (theta + mu).ln()) };
    ln_rising(theta, y) - ln_factorial(y) - theta * (mu / theta).ln_1p() + log_mu_part
}

pub fn poisson_logpmf(y: u64, mu: f64) -> f64 {
    let yf = y as f64;
    (if y == 0 { 0.0 } else { yf * mu.ln() }) - mu - ln_factorial(y)
}

/// Polygamma of order one.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x + x2 / 2.0 + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 * (1.0 / 30.0 - x2 * (5.0 / 66.0)))))
}

fn loglik(y: &[u64], mu: &[f64], theta: Option<f64>) -> f64 {
    match theta {
        Some(t) => y.iter().zip(mu).map(|(&y, &m)| nb_logpmf(y, m, t)).sum(),
        None => y.iter().zip(mu).map(|(&y, &m)| poisson_logpmf(y, m)).sum(),
    }
}

fn means(x: &DMatrix<f64>, beta: &DVector<f64>) -> Vec<f64> {
    (x * beta).iter().map(|e| e.exp()).collect()
}

/// Weighted least squares `(X' W X)^{-1} X' W z` via Cholesky.
fn wls(x: &DMatrix<f64>, w: &[f64], z: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let wx = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * w[i]);
    let xtwx = x.transpose() * &wx;
    let xtwz = wx.transpose() * DVector::from_column_slice(z);
    let chol = xtwx.cholesky().ok_or_else(|| Error::NegBin("design matrix is rank deficient".into()))?;
    Ok((chol.solve(&xtwz), chol.inverse()))
}

/// IRLS for `beta` at fixed dispersion (`None` = Poisson), with step halving
/// so the log-likelihood never decreases.
fn irls(x: &DMatrix<f64>, y: &[u64], theta: Option<f64>, start: DVector<f64>, max_iter: usize) -> Result<(DVector<f64>, f64)> {
    let mut beta = start;
    let mut mu = means(x, &beta);
    let mut ll = loglik(y, &mu, theta);
    for _ in 0..max_iter {
        let eta = x * &beta;
        let w: Vec<f64> = mu.iter().map(|&m| theta.map_or(m, |t| m / (1.0 + m / t))).collect();
        let z: Vec<f64> = (0..y.len()).map(|i| eta[i] + (y[i] as f64 - mu[i]) / mu[i]).collect();
        let (target, _) = wls(x, &w, &z)?;
        let mut step = &target - &beta;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = &beta + &step;
            let cmu = means(x, &cand);
            let cll = loglik(y, &cmu, theta);
            if cll.is_finite() && cll >= ll - 1e-12 * ll.abs() {
                accepted = Some((cand, cmu, cll));
                break;
            }
            step /= 2.0;
        }
        let Some((cand, cmu, cll)) = accepted else { break };
        let change = (&cand - &beta).amax();
        beta = cand;
        mu = cmu;
        let gain = cll - ll;
        ll = cll;
        if change <= 1e-12 * (1.0 + beta.amax()) || gain.abs() <= 1e-15 * (1.0 + ll.abs()) {
            break;
        }
    }
    Ok((beta, ll))
}

fn theta_score_info(y: &[u64], mu: &[f64], theta: f64) -> (f64, f64) {
    let mut score = 0.0;
    let mut info = 0.0;
    for (&yi, &m) in y.iter().zip(mu) {
        let yf = yi as f64;
        score += digamma(theta + yf) - digamma(theta) + theta.ln() + 1.0 - (theta + m).ln() - (yf + theta) / (m + theta);
        info += -trigamma(theta + yf) + trigamma(theta) - 1.0 / theta + 2.0 / (m + theta) - (yf + theta) / ((m + theta) * (m + theta));
    }
    (score, info)
}

/// Profile maximum likelihood for `theta` at fixed means: Newton steps on the
/// score with backtracking.
fn theta_ml(y: &[u64], mu: &[f64], start: f64) -> (f64, f64) {
    let mut theta = start;
    let mut ll = loglik(y, mu, Some(theta));
    for _ in 0..100 {
        let (score, info) = theta_score_info(y, mu, theta);
        let mut step = if info > 0.0 { score / info } else { score.signum() * theta };
        let mut moved = false;
        for _ in 0..60 {
            let cand = theta + step;
            if cand > 0.0 && cand.is_finite() {
                let cll = loglik(y, mu, Some(cand));
                if cll >= ll {
                    moved = (cand - theta).abs() > 0.0;
                    theta = cand;
                    ll = cll;
                    break;
                }
            }
            step /= 2.0;
        }
        if !moved || step.abs() <= 1e-12 * theta {
            break;
        }
    }
    let (_, info) = theta_score_info(y, mu, theta);
    (theta, if info > 0.0 { 1.0 / info.sqrt() } else { f64::NAN })
}

pub fn fit_negbin(data: &CountDataset, options: &NegBinOptions) -> Result<NegBinFit> {
    let n = data.len();
    let k = data.names.len();
    if n <= k + 2 {
        return Err(Error::NegBin(format!("need more than {} observations, got {n}", k + 2)));
    }
    if data.y.iter().all(|&y| y == 0) {
        return Err(Error::NegBin("all counts are zero".into()));
    }
    if let Some(t) = options.fixed_theta {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::NegBin(format!("fixed theta must be positive, got {t}")));
        }
    }
    let x = data.design();
    let y = &data.y;
    let mean = y.iter().sum::<u64>() as f64 / n as f64;
    let mut start = DVector::zeros(k + 1);
    start[0] = mean.ln();

    let (mut beta, _) = irls(&x, y, None, start, options.max_irls)?;
    let mut theta = match options.fixed_theta {
        Some(t) => t,
        None => {
            let mu = means(&x, &beta);
            let d: f64 = y.iter().zip(&mu).map(|(&yi, &m)| (yi as f64 / m - 1.0).powi(2)).sum();
            let moment = n as f64 / d;
            let start = if moment.is_finite() && moment > 0.0 { moment } else { 1.0 };
            theta_ml(y, &mu, start).0
        }
    };
    let mut theta_se = f64::NAN;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut ll = f64::NEG_INFINITY;
    let mut outer = 0;
    while outer < options.max_outer {
        outer += 1;
        let (b, _) = irls(&x, y, Some(theta), beta, options.max_irls)?;
        beta = b;
        let mu = means(&x, &beta);
        let old_theta = theta;
        if options.fixed_theta.is_none() {
            let (t, se) = theta_ml(y, &mu, theta);
            theta = t;
            theta_se = se;
        }
        let new_ll = loglik(y, &mu, Some(theta));
        trace.push(new_ll);
        let d_ll = (new_ll - ll).abs() / (new_ll.abs() + 0.1);
        let d_theta = (theta - old_theta).abs() / old_theta;
        ll = new_ll;
        if d_ll + d_theta < options.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("negative binomial fit did not converge in {} outer iterations", options.max_outer);
    }

    let mu = means(&x, &beta);
    let w: Vec<f64> = mu.iter().map(|&m| m / (1.0 + m / theta)).collect();
    let (_, cov) = wls(&x, &w, &vec![0.0; n])?;
    let mut names = vec!["(Intercept)".to_owned()];
    names.extend(data.names.iter().cloned());
    Ok(NegBinFit {
        names,
        coefficients: beta.iter().copied().collect(),
        std_errors: (0..=k).map(|j| cov[(j, j)].sqrt()).collect(),
        theta,
        theta_se,
        log_lik: ll,
        aic: 2.0 * (k as f64 + 2.0) - 2.0 * ll,
        n_obs: n,
        converged,
        outer_iterations: outer,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub stars: String,
}

/// `*` p < 0.1, `**` p < 0.05, `***` p < 0.01.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// Two-sided normal-theory tests for each coefficient.
pub fn wald_pvalues(fit: &NegBinFit) -> Result<Vec<WaldTest>> {
    fit.coefficients
        .iter()
        .zip(&fit.std_errors)
        .enumerate()
        .map(|(j, (&b, &se))| {
            if !(se > 0.0) {
                return Err(Error::ZeroStandardError(j));
            }
            let z = b / se;
            let p = erfc(z.abs() / std::f64::consts::SQRT_2);
            Ok(WaldTest { name: fit.names[j].clone(), estimate: b, se, z, p, stars: stars(p).to_owned() })
        })
        .collect()
}

/// Output record: coefficient table, dispersion and fit statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegBinReport {
    pub coefficients: Vec<WaldTest>,
    pub theta: f64,
    pub theta_se: f64,
    pub log_lik: f64,
    pub aic: f64,
    pub observations: usize,
    pub converged: bool,
}

pub fn report(fit: &NegBinFit) -> Result<NegBinReport> {
    Ok(NegBinReport {
        coefficients: wald_pvalues(fit)?,
        theta: fit.theta,
        theta_se: fit.theta_se,
        log_lik: fit.log_lik,
        aic: fit.aic,
        observations: fit.n_obs,
        converged: fit.converged,
    })
}
