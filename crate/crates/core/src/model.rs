//! Distributional regression layer: predictors are mapped to per-character
//! `(s, p)` through a log link for speed and a logit link for the stationary
//! probability, in four nested variants.
//!
//! Free parameters live on an unconstrained scale laid out as the `p` block
//! followed by the `s` block. A regressed block is `[intercept, coef_1..K]`;
//! a constant block is a single `logit(p)` or `log(s)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ctmc::RateParams;
use crate::data::{align_predictors, PredictorTable, TraitMatrix};
use crate::error::{Error, Result};
use crate::likelihood::{PruningTree, TraitState};
use crate::real::{logistic, logit, Real};
use crate::trees::PhyloTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Both `s` and `p` regressed.
    Full,
    /// `p` regressed, constant `s`.
    StationaryOnly,
    /// `s` regressed, constant `p`.
    SpeedOnly,
    Null,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::StationaryOnly, Variant::SpeedOnly, Variant::Null];

    pub fn regresses_p(self) -> bool {
        matches!(self, Variant::Full | Variant::StationaryOnly)
    }

    pub fn regresses_s(self) -> bool {
        matches!(self, Variant::Full | Variant::SpeedOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::StationaryOnly => "stationary-only",
            Variant::SpeedOnly => "speed-only",
            Variant::Null => "null",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// Normal prior on intercepts and regression coefficients.
    pub coef_mean: f64,
    pub coef_sd: f64,
    /// Log-normal prior on a constant speed.
    pub speed_log_mean: f64,
    pub speed_log_sd: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Priors { coef_mean: 0.0, coef_sd: 1.0, speed_log_mean: 0.0, speed_log_sd: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub priors: Priors,
    pub predictors: Vec<String>,
}

impl ModelSpec {
    pub fn new(variant: Variant, predictors: Vec<String>) -> Self {
        ModelSpec { variant, priors: Priors::default(), predictors }
    }

    pub fn n_predictors(&self) -> usize {
        self.predictors.len()
    }

    fn p_block(&self) -> usize {
        if self.variant.regresses_p() {
            1 + self.n_predictors()
        } else {
            1
        }
    }

    fn s_block(&self) -> usize {
        if self.variant.regresses_s() {
            1 + self.n_predictors()
        } else {
            1
        }
    }

    /// Number of free parameters.
    pub fn dim(&self) -> usize {
        self.p_block() + self.s_block()
    }

    /// Names in free-parameter order. Constants are named `p` and `s` and
    /// reported on their natural scale.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        for (block, regressed) in [("p", self.variant.regresses_p()), ("s", self.variant.regresses_s())] {
            if regressed {
                names.push(format!("{block}_intercept"));
                names.extend(self.predictors.iter().map(|n| format!("{block}_{n}")));
            } else {
                names.push(block.to_owned());
            }
        }
        names
    }

    /// Decodes an unconstrained vector.
    pub fn coefficients<T: Real>(&self, theta: &[T]) -> Result<CoefficientSet<T>> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), actual: theta.len(), context: "parameter vector" });
        }
        let (pb, sb) = theta.split_at(self.p_block());
        let p = if self.variant.regresses_p() {
            Component::Regressed { intercept: pb[0], coefs: pb[1..].to_vec() }
        } else {
            Component::Constant(logistic(pb[0]))
        };
        let s = if self.variant.regresses_s() {
            Component::Regressed { intercept: sb[0], coefs: sb[1..].to_vec() }
        } else {
            Component::Constant(sb[0].exp())
        };
        Ok(CoefficientSet { p, s })
    }

    /// Encodes coefficients onto the unconstrained scale.
    pub fn unconstrain<T: Real>(&self, coefs: &CoefficientSet<T>) -> Result<Vec<T>> {
        self.check(coefs)?;
        let mut out = Vec::with_capacity(self.dim());
        for (c, link) in [(&coefs.p, logit as fn(T) -> T), (&coefs.s, T::ln as fn(T) -> T)] {
            match c {
                Component::Regressed { intercept, coefs } => {
                    out.push(*intercept);
                    out.extend_from_slice(coefs);
                }
                Component::Constant(v) => out.push(link(*v)),
            }
        }
        Ok(out)
    }

    /// Maps an unconstrained vector to reported values (constants on their natural scale).
    pub fn constrain(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = theta.to_vec();
        if !self.variant.regresses_p() {
            out[0] = logistic(theta[0]);
        }
        if !self.variant.regresses_s() {
            let i = self.p_block();
            out[i] = theta[i].exp();
        }
        out
    }

    /// Inverse of [`ModelSpec::constrain`].
    pub fn unconstrain_values(&self, values: &[f64]) -> Vec<f64> {
        let mut out = values.to_vec();
        if !self.variant.regresses_p() {
            out[0] = logit(values[0]);
        }
        if !self.variant.regresses_s() {
            let i = self.p_block();
            out[i] = values[i].ln();
        }
        out
    }

    /// Starting point: regression terms jittered uniformly on `[-radius, radius]`,
    /// constants at their prior medians (`p = 0.5`, `s = exp(speed_log_mean)`).
    pub fn initial_point(&self, jitter: &mut dyn FnMut() -> f64, radius: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        let mut block = |regressed: bool, median: f64, out: &mut Vec<f64>, len: usize| {
            if regressed {
                out.extend((0..len).map(|_| radius * (2.0 * jitter() - 1.0)));
            } else {
                out.push(median);
            }
        };
        block(self.variant.regresses_p(), 0.0, &mut out, self.p_block());
        block(self.variant.regresses_s(), self.priors.speed_log_mean, &mut out, self.s_block());
        out
    }

    fn check<T: Real>(&self, coefs: &CoefficientSet<T>) -> Result<()> {
        let k = self.n_predictors();
        for (c, regressed) in [(&coefs.p, self.variant.regresses_p()), (&coefs.s, self.variant.regresses_s())] {
            match (c, regressed) {
                (Component::Regressed { coefs, .. }, true) if coefs.len() == k => {}
                (Component::Regressed { coefs, .. }, true) => {
                    return Err(Error::Dimension { expected: k, actual: coefs.len(), context: "coefficients" })
                }
                (Component::Constant(_), false) => {}
                _ => return Err(Error::Config(format!("coefficient blocks do not match variant {}", self.variant))),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Component<T> {
    Regressed { intercept: T, coefs: Vec<T> },
    Constant(T),
}

impl<T: Real> Component<T> {
    fn linear(&self, x: &[T]) -> Option<T> {
        match self {
            Component::Regressed { intercept, coefs } => {
                Some(coefs.iter().zip(x).fold(*intercept, |acc, (&b, &v)| acc + b * v))
            }
            Component::Constant(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet<T> {
    pub p: Component<T>,
    pub s: Component<T>,
}

impl<T: Real> CoefficientSet<T> {
    /// All regression terms zero (`p = 0.5`, `s = 1`) for the given spec.
    pub fn zeros(spec: &ModelSpec) -> Self {
        let k = spec.n_predictors();
        let regressed = || Component::Regressed { intercept: T::zero(), coefs: vec![T::zero(); k] };
        CoefficientSet {
            p: if spec.variant.regresses_p() { regressed() } else { Component::Constant(T::lit(0.5)) },
            s: if spec.variant.regresses_s() { regressed() } else { Component::Constant(T::one()) },
        }
    }
}

/// Per-character rates: `p = logistic(b0 + b.x)` and `s = exp(c0 + c.x)`,
/// or the constants.
pub fn link_params<T: Real>(spec: &ModelSpec, coefs: &CoefficientSet<T>, x: &[T]) -> Result<RateParams<T>> {
    if x.len() != spec.n_predictors() {
        return Err(Error::Dimension { expected: spec.n_predictors(), actual: x.len(), context: "predictor row" });
    }
    spec.check(coefs)?;
    Ok(link_unchecked(coefs, x))
}

fn link_unchecked<T: Real>(coefs: &CoefficientSet<T>, x: &[T]) -> RateParams<T> {
    let p = match &coefs.p {
        Component::Constant(p) => *p,
        c => logistic(c.linear(x).expect("regressed")),
    };
    let s = match &coefs.s {
        Component::Constant(s) => *s,
        c => c.linear(x).expect("regressed").exp(),
    };
    RateParams { s, p }
}

fn normal_lpdf<T: Real>(x: T, mean: T, sd: T) -> T {
    let z = (x - mean) / sd;
    -T::lit(0.5) * z * z - sd.ln() - T::lit(0.5) * T::TAU().ln()
}

/// Sum of prior log densities on the natural scale.
pub fn log_prior<T: Real>(spec: &ModelSpec, coefs: &CoefficientSet<T>) -> Result<T> {
    spec.check(coefs)?;
    let pr = &spec.priors;
    let (cm, csd) = (T::lit(pr.coef_mean), T::lit(pr.coef_sd));
    let regression = |c: &Component<T>| match c {
        Component::Regressed { intercept, coefs } => {
            std::iter::once(intercept).chain(coefs).map(|&b| normal_lpdf(b, cm, csd)).sum::<T>()
        }
        Component::Constant(_) => T::zero(),
    };
    let mut total = regression(&coefs.p) + regression(&coefs.s);
    if let Component::Constant(p) = coefs.p {
        if !(p > T::zero() && p < T::one()) {
            return Ok(T::neg_infinity());
        }
    }
    if let Component::Constant(s) = coefs.s {
        if !(s > T::zero()) {
            return Ok(T::neg_infinity());
        }
        let ls = s.ln();
        total = total + normal_lpdf(ls, T::lit(pr.speed_log_mean), T::lit(pr.speed_log_sd)) - ls;
    }
    Ok(total)
}

/// One tree with its characters and predictor rows aligned for evaluation.
#[derive(Debug, Clone)]
pub struct FamilyData<T> {
    pub tree: PruningTree<T>,
    pub character_ids: Vec<String>,
    /// `states[character]`, aligned with `tree.taxa()`.
    pub states: Vec<Vec<TraitState>>,
    /// `predictors[character]`
    pub predictors: Vec<Vec<T>>,
}

impl<T: Real> FamilyData<T> {
    /// Every matrix taxon must be a tip of `tree`; tree tips absent from the
    /// matrix are treated as missing for every character.
    pub fn new(tree: &PhyloTree<T>, matrix: &TraitMatrix, predictors: &PredictorTable) -> Result<Self> {
        let plan = PruningTree::new(tree);
        let rows = align_predictors(matrix, predictors)?;
        let mut taxon_row = vec![None; plan.taxa().len()];
        for (row, taxon) in matrix.taxa.iter().enumerate() {
            let slot = plan
                .taxa()
                .iter()
                .position(|t| t == taxon)
                .ok_or_else(|| Error::Alignment(format!("taxon `{taxon}` is not in the tree")))?;
            taxon_row[slot] = Some(row);
        }
        let states = (0..matrix.n_characters())
            .map(|j| {
                taxon_row
                    .iter()
                    .map(|r| r.map_or(TraitState::Missing, |r| matrix.cells[r][j]))
                    .collect()
            })
            .collect();
        Ok(FamilyData {
            tree: plan,
            character_ids: matrix.characters.clone(),
            states,
            predictors: rows.into_iter().map(|r| r.into_iter().map(T::lit).collect()).collect(),
        })
    }

    /// Builds directly from aligned columns.
    pub fn from_parts(tree: PruningTree<T>, character_ids: Vec<String>, states: Vec<Vec<TraitState>>, predictors: Vec<Vec<T>>) -> Result<Self> {
        if states.len() != character_ids.len() || predictors.len() != character_ids.len() {
            return Err(Error::Alignment("characters, states and predictors differ in length".into()));
        }
        if let Some(col) = states.iter().find(|c| c.len() != tree.taxa().len()) {
            return Err(Error::Dimension { expected: tree.taxa().len(), actual: col.len(), context: "character column" });
        }
        Ok(FamilyData { tree, character_ids, states, predictors })
    }

    pub fn n_characters(&self) -> usize {
        self.states.len()
    }

    fn check(&self, spec: &ModelSpec) -> Result<()> {
        match self.predictors.iter().find(|r| r.len() != spec.n_predictors()) {
            Some(r) => Err(Error::Dimension { expected: spec.n_predictors(), actual: r.len(), context: "predictor row" }),
            None => Ok(()),
        }
    }
}

/// Per-character log-likelihoods at the given coefficients.
pub fn pointwise_loglik<T: Real>(spec: &ModelSpec, coefs: &CoefficientSet<T>, data: &FamilyData<T>) -> Result<Vec<T>> {
    spec.check(coefs)?;
    data.check(spec)?;
    Ok(data
        .states
        .iter()
        .zip(&data.predictors)
        .map(|(col, x)| data.tree.log_likelihood(col, link_unchecked(coefs, x)))
        .collect())
}

/// Log prior plus the summed per-character log-likelihood (natural scale,
/// no change-of-variables term).
pub fn log_posterior<T: Real>(spec: &ModelSpec, coefs: &CoefficientSet<T>, data: &FamilyData<T>) -> Result<T> {
    let prior = log_prior(spec, coefs)?;
    let ll = pointwise_loglik(spec, coefs, data)?;
    Ok(prior + ll.into_iter().sum::<T>())
}

/// Log density on the unconstrained scale, including the log-Jacobian of
/// the `exp` / `logistic` maps for constant components, and its gradient.
pub fn log_posterior_grad<T: Real>(spec: &ModelSpec, theta: &[T], data: &FamilyData<T>, grad: &mut [T]) -> Result<T> {
    if grad.len() != theta.len() {
        return Err(Error::Dimension { expected: theta.len(), actual: grad.len(), context: "gradient buffer" });
    }
    let coefs = spec.coefficients(theta)?;
    data.check(spec)?;
    Ok(unconstrained_density(spec, theta, &coefs, data, grad))
}

fn unconstrained_density<T: Real>(
    spec: &ModelSpec,
    theta: &[T],
    coefs: &CoefficientSet<T>,
    data: &FamilyData<T>,
    grad: &mut [T],
) -> T {
    let pr = &spec.priors;
    let (cm, csd) = (T::lit(pr.coef_mean), T::lit(pr.coef_sd));
    let k = spec.n_predictors();
    let p_off = 0;
    let s_off = spec.p_block();
    let mut total = T::zero();
    grad.iter_mut().for_each(|g| *g = T::zero());

    // priors and Jacobians
    if spec.variant.regresses_p() {
        for i in 0..=k {
            total = total + normal_lpdf(theta[p_off + i], cm, csd);
            grad[p_off + i] = -(theta[p_off + i] - cm) / (csd * csd);
        }
    } else {
        // uniform(0, 1) on p; Jacobian of p = logistic(v) is p(1 - p)
        let v = theta[p_off];
        let p = logistic(v);
        total = total + log_logistic(v) + log_logistic(-v);
        grad[p_off] = T::one() - p - p;
    }
    if spec.variant.regresses_s() {
        for i in 0..=k {
            total = total + normal_lpdf(theta[s_off + i], cm, csd);
            grad[s_off + i] = -(theta[s_off + i] - cm) / (csd * csd);
        }
    } else {
        // log-normal on s = exp(u) plus Jacobian u is a normal density on u
        let (m, sd) = (T::lit(pr.speed_log_mean), T::lit(pr.speed_log_sd));
        let u = theta[s_off];
        total = total + normal_lpdf(u, m, sd);
        grad[s_off] = -(u - m) / (sd * sd);
    }

    for (col, x) in data.states.iter().zip(&data.predictors) {
        let rp = link_unchecked(coefs, x);
        let g = data.tree.log_likelihood_grad(col, rp);
        total = total + g.value;
        // d/d(linear predictor) through the links
        let d_eta_p = g.d_p * rp.p * (T::one() - rp.p);
        let d_eta_s = g.d_s * rp.s;
        if spec.variant.regresses_p() {
            grad[p_off] = grad[p_off] + d_eta_p;
            for (j, &xv) in x.iter().enumerate() {
                grad[p_off + 1 + j] = grad[p_off + 1 + j] + d_eta_p * xv;
            }
        } else {
            grad[p_off] = grad[p_off] + d_eta_p;
        }
        if spec.variant.regresses_s() {
            grad[s_off] = grad[s_off] + d_eta_s;
            for (j, &xv) in x.iter().enumerate() {
                grad[s_off + 1 + j] = grad[s_off + 1 + j] + d_eta_s * xv;
            }
        } else {
            grad[s_off] = grad[s_off] + d_eta_s;
        }
    }
    total
}

/// `log(logistic(x))` without overflow.
fn log_logistic<T: Real>(x: T) -> T {
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// A spec bound to one tree's data: the target density for the sampler.
#[derive(Debug, Clone)]
pub struct Posterior<'a, T> {
    pub spec: &'a ModelSpec,
    pub data: &'a FamilyData<T>,
}

impl<'a, T: Real> Posterior<'a, T> {
    pub fn new(spec: &'a ModelSpec, data: &'a FamilyData<T>) -> Result<Self> {
        data.check(spec)?;
        Ok(Posterior { spec, data })
    }

    /// Unconstrained log density and gradient. Returns `-inf` for parameter
    /// vectors whose rates leave the valid domain numerically.
    pub fn log_density_grad(&self, theta: &[T], grad: &mut [T]) -> T {
        let coefs = self.spec.coefficients(theta).expect("dimension fixed by spec");
        let v = unconstrained_density(self.spec, theta, &coefs, self.data, grad);
        if v.is_nan() {
            T::neg_infinity()
        } else {
            v
        }
    }

    pub fn pointwise(&self, theta: &[T]) -> Vec<T> {
        let coefs = self.spec.coefficients(theta).expect("dimension fixed by spec");
        pointwise_loglik(self.spec, &coefs, self.data).expect("checked at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::parse_newick;

    fn names(k: usize) -> Vec<String> {
        crate::data::DEFAULT_PREDICTORS[..k].iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn zero_coefficients_give_unit_speed_and_even_p() {
        let spec = ModelSpec::new(Variant::Full, names(3));
        let rp = link_params(&spec, &CoefficientSet::zeros(&spec), &[0.3, -2.0, 9.0]).unwrap();
        assert_eq!((rp.s, rp.p), (1.0, 0.5));
    }

    #[test]
    fn logit_link_example() {
        let spec = ModelSpec::new(Variant::Full, names(3));
        let coefs = CoefficientSet {
            p: Component::Regressed { intercept: 0.0f64, coefs: vec![1.0, 0.0, 0.0] },
            s: Component::Regressed { intercept: 0.0, coefs: vec![0.0; 3] },
        };
        let rp = link_params(&spec, &coefs, &[2.0, 5.0, 5.0]).unwrap();
        assert!((rp.p - 0.8808).abs() < 1e-4);
        assert!(link_params(&spec, &coefs, &[2.0]).is_err());
    }

    #[test]
    fn null_variant_ignores_predictors() {
        let spec = ModelSpec::new(Variant::Null, names(3));
        let coefs = spec.coefficients(&[0.4, -0.2]).unwrap();
        let a = link_params(&spec, &coefs, &[1.0, 2.0, 3.0]).unwrap();
        let b = link_params(&spec, &coefs, &[-5.0, 0.0, 8.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prior_examples() {
        let half_ln_tau = 0.5 * std::f64::consts::TAU.ln();
        let spec = ModelSpec::new(Variant::Null, vec![]);
        let c = CoefficientSet { p: Component::Constant(0.5), s: Component::Constant(1.0) };
        // uniform p contributes 0; lognormal(0, 1) at s = 1 is -0.5 ln(2 pi)
        assert!((log_prior(&spec, &c).unwrap() + half_ln_tau).abs() < 1e-15);
        assert!((half_ln_tau - 0.9189).abs() < 1e-4);
        let bad = CoefficientSet { p: Component::Constant(1.5), s: Component::Constant(1.0) };
        assert_eq!(log_prior(&spec, &bad).unwrap(), f64::NEG_INFINITY);
        let bad = CoefficientSet { p: Component::Constant(0.5), s: Component::Constant(0.0) };
        assert_eq!(log_prior(&spec, &bad).unwrap(), f64::NEG_INFINITY);

        let full = ModelSpec::new(Variant::Full, vec![]);
        let z = CoefficientSet::<f64>::zeros(&full);
        // two intercepts at the mode of N(0, 1)
        assert!((log_prior(&full, &z).unwrap() + 2.0 * half_ln_tau).abs() < 1e-15);
    }

    #[test]
    fn parameter_counts_and_names() {
        assert_eq!(ModelSpec::new(Variant::Null, names(3)).dim(), 2);
        assert_eq!(ModelSpec::new(Variant::Full, names(3)).dim(), 8);
        assert_eq!(ModelSpec::new(Variant::SpeedOnly, names(3)).dim(), 5);
        assert_eq!(
            ModelSpec::new(Variant::StationaryOnly, names(1)).param_names(),
            vec!["p_intercept", "p_assoc", "s"]
        );
    }

    #[test]
    fn unconstrain_round_trip() {
        for v in Variant::ALL {
            let spec = ModelSpec::new(v, names(2));
            let theta: Vec<f64> = vec![0.3, -0.7, 1.1, 0.2, -0.4, 0.9][..spec.dim()].to_vec();
            let c = spec.coefficients(&theta).unwrap();
            let back = spec.unconstrain(&c).unwrap();
            for (a, b) in theta.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!("full".parse::<Variant>().is_ok());
        assert!("both".parse::<Variant>().is_err());
    }

    fn toy_data() -> FamilyData<f64> {
        let tree = parse_newick::<f64>("((A:0.5,B:0.7):0.3,(C:0.2,D:1.0):0.4);").unwrap();
        let m = TraitMatrix::from_reader(
            "taxon,c1,c2,c3\nA,1,0,NA\nB,1,1,NA\nC,0,1,NA\nD,NA,0,NA\n".as_bytes(),
            "mem",
        )
        .unwrap();
        let p = PredictorTable::new(
            vec!["c1".into(), "c2".into(), "c3".into()],
            names(2),
            vec![vec![0.5, -1.0], vec![-0.3, 2.0], vec![1.0, 1.0]],
        )
        .unwrap();
        FamilyData::new(&tree, &m, &p).unwrap()
    }

    #[test]
    fn all_missing_character_adds_nothing() {
        let data = toy_data();
        let spec = ModelSpec::new(Variant::Full, names(2));
        let c = spec.coefficients(&[0.2, 0.1, -0.3, 0.4, 0.5, -0.1]).unwrap();
        let pw = pointwise_loglik(&spec, &c, &data).unwrap();
        assert_eq!(pw[2], 0.0);
        let lp = log_posterior(&spec, &c, &data).unwrap();
        assert!((lp - log_prior(&spec, &c).unwrap() - pw.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences_for_every_variant() {
        let data = toy_data();
        for v in Variant::ALL {
            let spec = ModelSpec::new(v, names(2));
            let theta: Vec<f64> = [0.2, 0.1, -0.3, 0.4, 0.5, -0.1][..spec.dim()].to_vec();
            let mut g = vec![0.0; spec.dim()];
            let f0 = log_posterior_grad(&spec, &theta, &data, &mut g).unwrap();
            let mut scratch = vec![0.0; spec.dim()];
            for i in 0..spec.dim() {
                let h = 1e-6;
                let mut up = theta.clone();
                up[i] += h;
                let mut dn = theta.clone();
                dn[i] -= h;
                let fd = (log_posterior_grad(&spec, &up, &data, &mut scratch).unwrap()
                    - log_posterior_grad(&spec, &dn, &data, &mut scratch).unwrap())
                    / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{v} param {i}: {fd} vs {}", g[i]);
            }
            assert!(f0.is_finite());
        }
    }

    #[test]
    fn unknown_taxon_in_matrix_is_rejected() {
        let tree = parse_newick::<f64>("(A:1,B:1);").unwrap();
        let m = TraitMatrix::from_reader("taxon,c1\nA,1\nZ,0\n".as_bytes(), "mem").unwrap();
        let p = PredictorTable::new(vec!["c1".into()], vec![], vec![vec![]]).unwrap();
        assert!(FamilyData::new(&tree, &m, &p).is_err());
    }
}
