//! Felsenstein pruning for a single binary character, with analytic
//! gradients with respect to the speed `s` and stationary probability `p`.
//!
//! Missing tips enter as `(1, 1)` partials. The root is weighted by the
//! stationary distribution `(1 - p, p)`.

use std::collections::BTreeMap;
use std::fmt;

use crate::ctmc::{transition_unchecked, transition_with_gradient, RateParams, Transition};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::trees::PhyloTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TraitState {
    Absent,
    Present,
    Missing,
}

impl TraitState {
    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            TraitState::Absent
        } else {
            TraitState::Present
        }
    }

    pub fn is_missing(self) -> bool {
        self == TraitState::Missing
    }

    /// `0`, `1` or `NA` (case-insensitive; empty cells are also missing).
    pub fn parse(cell: &str) -> Option<Self> {
        match cell.trim() {
            "0" => Some(TraitState::Absent),
            "1" => Some(TraitState::Present),
            s if s.is_empty() || s.eq_ignore_ascii_case("na") => Some(TraitState::Missing),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            TraitState::Absent => TraitState::Present,
            TraitState::Present => TraitState::Absent,
            TraitState::Missing => TraitState::Missing,
        }
    }

    fn index(self) -> Option<usize> {
        match self {
            TraitState::Absent => Some(0),
            TraitState::Present => Some(1),
            TraitState::Missing => None,
        }
    }
}

impl fmt::Display for TraitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraitState::Absent => "0",
            TraitState::Present => "1",
            TraitState::Missing => "NA",
        })
    }
}

/// Observed states of one character, keyed by taxon.
#[derive(Debug, Clone, PartialEq)]
pub struct TipStates {
    pub character: String,
    pub states: BTreeMap<String, TraitState>,
}

impl TipStates {
    pub fn new(character: impl Into<String>) -> Self {
        TipStates { character: character.into(), states: BTreeMap::new() }
    }

    pub fn with(mut self, taxon: &str, state: TraitState) -> Self {
        self.states.insert(taxon.to_owned(), state);
        self
    }
}

/// A tree flattened into postorder for repeated likelihood evaluation.
///
/// Node `i`'s children all have indices below `i`; the root is last.
#[derive(Debug, Clone)]
pub struct PruningTree<T> {
    taxa: Vec<String>,
    tip_of: Vec<Option<usize>>,
    child_start: Vec<usize>,
    children: Vec<usize>,
    branch: Vec<T>,
}

impl<T: Real> PruningTree<T> {
    pub fn new(tree: &PhyloTree<T>) -> Self {
        let order = tree.postorder();
        let mut index = vec![0usize; tree.n_nodes()];
        for (i, &id) in order.iter().enumerate() {
            index[id] = i;
        }
        let mut taxa = Vec::new();
        let mut tip_of = Vec::with_capacity(order.len());
        let mut child_start = Vec::with_capacity(order.len() + 1);
        let mut children = Vec::new();
        let mut branch = Vec::with_capacity(order.len());
        for &id in &order {
            let node = tree.node(id);
            child_start.push(children.len());
            if node.is_tip() {
                tip_of.push(Some(taxa.len()));
                taxa.push(node.label.clone().unwrap_or_default());
            } else {
                tip_of.push(None);
                children.extend(node.children.iter().map(|&c| index[c]));
            }
            branch.push(node.branch_length);
        }
        child_start.push(children.len());
        PruningTree { taxa, tip_of, child_start, children, branch }
    }

    /// Tip labels in the order expected by [`Self::log_likelihood`].
    pub fn taxa(&self) -> &[String] {
        &self.taxa
    }

    pub fn n_nodes(&self) -> usize {
        self.branch.len()
    }

    /// Orders `tips` to match [`Self::taxa`]. Every tree tip must be present
    /// and no unknown taxa are accepted.
    pub fn align(&self, tips: &TipStates) -> Result<Vec<TraitState>> {
        let aligned = self
            .taxa
            .iter()
            .map(|t| tips.states.get(t).copied().ok_or_else(|| Error::MissingTip(t.clone())))
            .collect::<Result<Vec<_>>>()?;
        if tips.states.len() != self.taxa.len() {
            let extra = tips
                .states
                .keys()
                .find(|k| !self.taxa.contains(k))
                .expect("length mismatch implies an unknown taxon");
            return Err(Error::ExtraTaxon(extra.clone()));
        }
        Ok(aligned)
    }

    #[inline]
    fn kids(&self, v: usize) -> &[usize] {
        &self.children[self.child_start[v]..self.child_start[v + 1]]
    }

    /// Log-likelihood of tip states aligned with [`Self::taxa`].
    pub fn log_likelihood(&self, states: &[TraitState], rp: RateParams<T>) -> T {
        debug_assert_eq!(states.len(), self.taxa.len());
        let n = self.n_nodes();
        let floor = T::min_positive_value().sqrt();
        let mut partial: Vec<[T; 2]> = vec![[T::one(); 2]; n];
        let mut log_scale = T::zero();
        for v in 0..n {
            if let Some(tip) = self.tip_of[v] {
                partial[v] = one_hot(states[tip]);
                continue;
            }
            let mut acc = [T::one(); 2];
            for &c in self.kids(v) {
                let u = match self.tip_of[c].map(|t| states[t].index()) {
                    Some(None) => continue,
                    Some(Some(obs)) => {
                        let m = transition_unchecked(rp, self.branch[c]);
                        [m[0][obs], m[1][obs]]
                    }
                    None => apply(&transition_unchecked(rp, self.branch[c]), &partial[c]),
                };
                acc = [acc[0] * u[0], acc[1] * u[1]];
            }
            let m = acc[0].max(acc[1]);
            if m < floor && m > T::zero() {
                acc = [acc[0] / m, acc[1] / m];
                log_scale = log_scale + m.ln();
            }
            partial[v] = acc;
        }
        // (1 - p) r0 + p r1, arranged so an all-missing root gives exactly 1
        let root = partial[n - 1];
        (root[0] + rp.p * (root[1] - root[0])).ln() + log_scale
    }

    /// Log-likelihood and its gradient `(d/ds, d/dp)`, by forward-mode
    /// differentiation through the pruning recursion.
    pub fn log_likelihood_grad(&self, states: &[TraitState], rp: RateParams<T>) -> LogLikGrad<T> {
        debug_assert_eq!(states.len(), self.taxa.len());
        let n = self.n_nodes();
        let floor = T::min_positive_value().sqrt();
        let zero = [T::zero(); 2];
        let mut val: Vec<[T; 2]> = vec![[T::one(); 2]; n];
        let mut d_s: Vec<[T; 2]> = vec![zero; n];
        let mut d_p: Vec<[T; 2]> = vec![zero; n];
        let mut log_scale = T::zero();
        for v in 0..n {
            if let Some(tip) = self.tip_of[v] {
                val[v] = one_hot(states[tip]);
                continue;
            }
            let (mut acc, mut acc_s, mut acc_p) = ([T::one(); 2], zero, zero);
            for &c in self.kids(v) {
                let (u, us, up) = match self.tip_of[c].map(|t| states[t].index()) {
                    Some(None) => continue,
                    Some(Some(obs)) => {
                        let (m, ms, mp) = transition_with_gradient(rp, self.branch[c]);
                        ([m[0][obs], m[1][obs]], [ms[0][obs], ms[1][obs]], [mp[0][obs], mp[1][obs]])
                    }
                    None => {
                        let (m, ms, mp) = transition_with_gradient(rp, self.branch[c]);
                        let u = apply(&m, &val[c]);
                        let us = add(apply_derivative(&ms, &val[c]), apply_linear(&m, &d_s[c]));
                        let up = add(apply_derivative(&mp, &val[c]), apply_linear(&m, &d_p[c]));
                        (u, us, up)
                    }
                };
                for x in 0..2 {
                    acc_s[x] = acc_s[x] * u[x] + acc[x] * us[x];
                    acc_p[x] = acc_p[x] * u[x] + acc[x] * up[x];
                    acc[x] = acc[x] * u[x];
                }
            }
            let m = acc[0].max(acc[1]);
            if m < floor && m > T::zero() {
                for x in 0..2 {
                    acc[x] = acc[x] / m;
                    acc_s[x] = acc_s[x] / m;
                    acc_p[x] = acc_p[x] / m;
                }
                log_scale = log_scale + m.ln();
            }
            val[v] = acc;
            d_s[v] = acc_s;
            d_p[v] = acc_p;
        }
        let r = n - 1;
        let p = rp.p;
        let lik = val[r][0] + p * (val[r][1] - val[r][0]);
        let lik_s = d_s[r][0] + p * (d_s[r][1] - d_s[r][0]);
        let lik_p = d_p[r][0] + p * (d_p[r][1] - d_p[r][0]) + val[r][1] - val[r][0];
        LogLikGrad { value: lik.ln() + log_scale, d_s: lik_s / lik, d_p: lik_p / lik }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikGrad<T> {
    pub value: T,
    pub d_s: T,
    pub d_p: T,
}

#[inline]
fn one_hot<T: Real>(state: TraitState) -> [T; 2] {
    match state {
        TraitState::Absent => [T::one(), T::zero()],
        TraitState::Present => [T::zero(), T::one()],
        TraitState::Missing => [T::one(), T::one()],
    }
}

/// `m * v` for a row-stochastic `m`, written with the off-diagonal terms
/// only so that `v = (1, 1)` maps to exactly `(1, 1)`.
#[inline]
fn apply<T: Real>(m: &Transition<T>, v: &[T; 2]) -> [T; 2] {
    let diff = v[1] - v[0];
    [v[0] + m[0][1] * diff, v[1] - m[1][0] * diff]
}

/// `dm * v` for a derivative of a stochastic matrix (rows sum to zero).
#[inline]
fn apply_derivative<T: Real>(dm: &Transition<T>, v: &[T; 2]) -> [T; 2] {
    let diff = v[1] - v[0];
    [dm[0][1] * diff, -dm[1][0] * diff]
}

#[inline]
fn apply_linear<T: Real>(m: &Transition<T>, v: &[T; 2]) -> [T; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

#[inline]
fn add<T: Real>(a: [T; 2], b: [T; 2]) -> [T; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

/// Natural-log likelihood of one character on one tree.
pub fn log_likelihood<T: Real>(tree: &PhyloTree<T>, tips: &TipStates, rp: RateParams<T>) -> Result<T> {
    rp.check()?;
    let plan = PruningTree::new(tree);
    let states = plan.align(tips)?;
    Ok(plan.log_likelihood(&states, rp))
}

/// Log-likelihood together with `(dlogL/ds, dlogL/dp)`.
pub fn log_likelihood_grad<T: Real>(
    tree: &PhyloTree<T>,
    tips: &TipStates,
    rp: RateParams<T>,
) -> Result<LogLikGrad<T>> {
    rp.check()?;
    let plan = PruningTree::new(tree);
    let states = plan.align(tips)?;
    Ok(plan.log_likelihood_grad(&states, rp))
}

const ORACLE_MAX_OBSERVED: usize = 12;
const ORACLE_MAX_FREE: usize = 22;

/// Likelihood (not log) by explicit summation over every joint assignment
/// of states to internal nodes and missing tips. Exponential cost; intended
/// as a reference for small trees.
pub fn enumerate_likelihood_oracle<T: Real>(tree: &PhyloTree<T>, tips: &TipStates, rp: RateParams<T>) -> Result<T> {
    rp.check()?;
    let mut fixed: Vec<Option<usize>> = vec![None; tree.n_nodes()];
    let mut observed = 0;
    for id in tree.tips() {
        let label = tree.node(id).label.clone().unwrap_or_default();
        let state = *tips.states.get(&label).ok_or(Error::MissingTip(label))?;
        if let Some(x) = state.index() {
            fixed[id] = Some(x);
            observed += 1;
        }
    }
    for k in tips.states.keys() {
        if tree.find_tip(k).is_none() {
            return Err(Error::ExtraTaxon(k.clone()));
        }
    }
    let free: Vec<usize> = (0..tree.n_nodes()).filter(|&id| fixed[id].is_none()).collect();
    if observed > ORACLE_MAX_OBSERVED || free.len() > ORACLE_MAX_FREE {
        return Err(Error::OracleTooLarge { limit: ORACLE_MAX_FREE, actual: free.len() });
    }
    let edges: Vec<(usize, usize, Transition<T>)> = (0..tree.n_nodes())
        .filter_map(|id| {
            tree.node(id)
                .parent
                .map(|p| (p, id, transition_unchecked(rp, tree.node(id).branch_length)))
        })
        .collect();
    let pi = rp.stationary();
    let mut assignment: Vec<usize> = fixed.iter().map(|s| s.unwrap_or(0)).collect();
    let mut total = T::zero();
    for mask in 0u64..(1u64 << free.len()) {
        for (bit, &id) in free.iter().enumerate() {
            assignment[id] = ((mask >> bit) & 1) as usize;
        }
        let mut prob = pi[assignment[tree.root()]];
        for (parent, child, m) in &edges {
            prob = prob * m[assignment[*parent]][assignment[*child]];
        }
        total = total + prob;
    }
    Ok(total)
}
