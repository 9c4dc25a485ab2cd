//! Posterior summaries and convergence diagnostics: type-7 quantiles,
//! rank-normalised split R-hat and bulk effective sample size.

use rustfft::{num_complex::Complex, FftPlanner};
use statrs::distribution::{ContinuousCDF, Normal};

/// Linear-interpolation quantile (R type 7) of unsorted data.
pub fn quantile(values: &[f64], prob: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, prob)
}

pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Median and central interval with mass `level`.
pub fn equal_tailed_interval(values: &[f64], level: f64) -> (f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    (quantile_sorted(&v, 0.5), quantile_sorted(&v, a), quantile_sorted(&v, 1.0 - a))
}

fn split_chains(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Replaces each draw by the normal score of its pooled fractional rank.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for (c, chain) in chains.iter().enumerate() {
        all.extend(chain.iter().enumerate().map(|(i, &v)| (v, c, i)));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, k) in &all[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| sample_var(c)).collect::<Vec<_>>());
    let b = n * sample_var(&means);
    let var_hat = (n - 1.0) / n * w + b / n;
    (var_hat / w).sqrt()
}

fn usable(chains: &[&[f64]]) -> bool {
    !chains.is_empty() && chains.iter().all(|c| c.len() >= 4 && c.len() == chains[0].len())
}

fn is_constant(chains: &[&[f64]]) -> bool {
    let first = chains[0][0];
    chains.iter().all(|c| c.iter().all(|&v| v == first))
}

/// Rank-normalised split R-hat: the larger of the bulk and folded versions.
/// `NaN` when there are fewer than four draws per chain or the draws are constant.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    if !usable(chains) || is_constant(chains) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    let bulk = basic_rhat(&rank_normalize(&split));
    let all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
    let med = quantile(&all, 0.5);
    let folded: Vec<Vec<f64>> = split.iter().map(|c| c.iter().map(|v| (v - med).abs()).collect()).collect();
    let tail = basic_rhat(&rank_normalize(&folded));
    bulk.max(tail)
}

/// Biased autocovariance at all lags via zero-padded FFT.
fn autocovariance(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - m, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains[0].len();
    let mut planner = FftPlanner::new();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c, &mut planner)).collect();
    let chain_means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    let mean_var = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&chain_means);
    }
    let lag = |t: usize| acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;

    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = 1.0 - (mean_var - lag(1)) / var_plus;
    rho[1] = odd;
    let mut t = 0;
    while t + 3 < n && even + odd > 0.0 {
        t += 2;
        even = 1.0 - (mean_var - lag(t)) / var_plus;
        odd = 1.0 - (mean_var - lag(t + 1)) / var_plus;
        if even + odd >= 0.0 {
            rho[t] = even;
            rho[t + 1] = odd;
        }
    }
    let max_t = t;
    if even > 0.0 {
        rho[max_t] = even;
    }
    // initial monotone sequence
    let mut t = 0;
    while t + 4 <= max_t {
        t += 2;
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t] {
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0;
            rho[t + 2] = rho[t + 1];
        }
    }
    let total = (m * n) as f64;
    let tau = (-1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + rho[max_t]).max(1.0 / total.log10());
    total / tau
}

/// Bulk effective sample size (rank-normalised split chains).
pub fn ess_bulk(chains: &[&[f64]]) -> f64 {
    if !usable(chains) || is_constant(chains) {
        return f64::NAN;
    }
    ess_raw(&rank_normalize(&split_chains(chains)))
}

/// Effective sample size of the raw draws, without rank normalisation.
pub fn ess_basic(chains: &[&[f64]]) -> f64 {
    if !usable(chains) || is_constant(chains) {
        return f64::NAN;
    }
    ess_raw(&split_chains(chains))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn type7_quantiles() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        let (med, lo, hi) = equal_tailed_interval(&v, 0.95);
        assert_relative_eq!(med, 500.5);
        assert_relative_eq!(lo, 25.975, epsilon = 1e-9);
        assert_relative_eq!(hi, 975.025, epsilon = 1e-9);
        assert_eq!(quantile(&[3.0], 0.3), 3.0);
        assert!(quantile(&[], 0.5).is_nan());
    }

    #[test]
    fn fft_autocovariance_matches_direct_sum() {
        let x = [1.0, 3.0, -2.0, 0.5, 4.0, 2.0, -1.0];
        let m = mean(&x);
        let mut planner = FftPlanner::new();
        let a = autocovariance(&x, &mut planner);
        for (k, ak) in a.iter().enumerate() {
            let direct: f64 = (0..x.len() - k).map(|t| (x[t] - m) * (x[t + k] - m)).sum::<f64>() / x.len() as f64;
            assert_relative_eq!(*ak, direct, epsilon = 1e-12);
        }
    }

    fn iid_chains(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m).map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect()).collect()
    }

    #[test]
    fn iid_draws_have_full_ess_and_unit_rhat() {
        let chains = iid_chains(4, 1000, 3);
        let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
        let ess = ess_bulk(&refs);
        assert!((ess / 4000.0 - 1.0).abs() < 0.1, "{ess}");
        assert!(split_rhat(&refs) < 1.01);
    }

    #[test]
    fn autocorrelated_chain_has_reduced_ess() {
        // AR(1) with phi = 0.9: ESS/N = (1 - phi)/(1 + phi)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = 0.0;
        let chain: Vec<f64> = (0..20000)
            .map(|_| {
                x = 0.9 * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
            .collect();
        let ess = ess_basic(&[&chain]);
        let expected = 20000.0 * 0.1 / 1.9;
        assert!((ess / expected - 1.0).abs() < 0.2, "{ess} vs {expected}");
    }

    #[test]
    fn shifted_chains_inflate_rhat() {
        let mut chains = iid_chains(2, 500, 9);
        for v in chains[1].iter_mut() {
            *v += 3.0;
        }
        let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
        assert!(split_rhat(&refs) > 1.5);
    }

    #[test]
    fn degenerate_inputs_give_nan() {
        assert!(split_rhat(&[&[1.0, 1.0, 1.0, 1.0]]).is_nan());
        assert!(ess_bulk(&[&[1.0, 2.0]]).is_nan());
    }
}
