//! Two-state continuous-time Markov chain parameterised by a speed of change
//! `s` and a stationary probability `p` of state 1.
//!
//! Gain (0 -> 1) happens at rate `s * p`, loss (1 -> 0) at rate `s * (1 - p)`,
//! so the total rate is `s` and the stationary distribution is `(1 - p, p)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::trees::PhyloTree;

/// Row-stochastic 2x2 matrix, `m[from][to]`.
pub type Transition<T> = [[T; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateParams<T> {
    /// Speed of change, events per unit branch length.
    pub s: T,
    /// Stationary probability of state 1.
    pub p: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateMatrix<T> {
    pub q_gain: T,
    pub q_loss: T,
}

impl<T: Real> RateParams<T> {
    pub fn new(s: T, p: T) -> Result<Self> {
        let rp = RateParams { s, p };
        rp.check()?;
        Ok(rp)
    }

    pub fn check(&self) -> Result<()> {
        if self.s > T::zero() && self.s.is_finite() && self.p > T::zero() && self.p < T::one() {
            Ok(())
        } else {
            Err(Error::InvalidRates { s: self.s.as_f64(), p: self.p.as_f64() })
        }
    }

    pub fn rates(&self) -> RateMatrix<T> {
        rates_from_params(*self)
    }

    pub fn stationary(&self) -> [T; 2] {
        [T::one() - self.p, self.p]
    }
}

impl<T: Real> RateMatrix<T> {
    pub fn speed(&self) -> T {
        self.q_gain + self.q_loss
    }

    pub fn stationary_probability(&self) -> T {
        self.q_gain / (self.q_gain + self.q_loss)
    }

    /// Generator `[[-q_gain, q_gain], [q_loss, -q_loss]]`.
    pub fn generator(&self) -> Transition<T> {
        [[-self.q_gain, self.q_gain], [self.q_loss, -self.q_loss]]
    }
}

pub fn rates_from_params<T: Real>(rp: RateParams<T>) -> RateMatrix<T> {
    RateMatrix { q_gain: rp.s * rp.p, q_loss: rp.s * (T::one() - rp.p) }
}

/// Closed-form `exp(Q t)`.
pub fn transition_matrix<T: Real>(rp: RateParams<T>, t: T) -> Result<Transition<T>> {
    if t < T::zero() || t.is_nan() {
        return Err(Error::NegativeTime(t.as_f64()));
    }
    Ok(transition_unchecked(rp, t))
}

#[inline]
pub(crate) fn transition_unchecked<T: Real>(rp: RateParams<T>, t: T) -> Transition<T> {
    let x = -rp.s * t;
    let decay = x.exp();
    // 1 - e^{-st} without cancellation for small st
    let moved = -x.exp_m1();
    let q = T::one() - rp.p;
    [
        [q + rp.p * decay, rp.p * moved],
        [q * moved, rp.p + q * decay],
    ]
}

/// Transition matrix with its partial derivatives with respect to `s` and `p`.
#[inline]
pub fn transition_with_gradient<T: Real>(rp: RateParams<T>, t: T) -> (Transition<T>, Transition<T>, Transition<T>) {
    let x = -rp.s * t;
    let decay = x.exp();
    let moved = -x.exp_m1();
    let q = T::one() - rp.p;
    let m = [[q + rp.p * decay, rp.p * moved], [q * moved, rp.p + q * decay]];
    let td = t * decay;
    let ds = [[-rp.p * td, rp.p * td], [q * td, -q * td]];
    let dp = [[-moved, moved], [-moved, moved]];
    (m, ds, dp)
}

/// How the root state is chosen in [`simulate_history`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RootState {
    Zero,
    One,
    #[default]
    Stationary,
}

/// Simulates the character forward along the tree and returns tip states.
///
/// Along each branch waiting times are exponential with rate `q_gain` in state
/// 0 and `q_loss` in state 1; the state flips at each event until the branch
/// length is used up.
pub fn simulate_history<T: Real>(
    tree: &PhyloTree<T>,
    rp: RateParams<T>,
    root_state: RootState,
    seed: u64,
) -> Result<BTreeMap<String, u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_history_with(tree, rp, root_state, &mut rng)
}

pub fn simulate_history_with<T: Real, R: Rng + ?Sized>(
    tree: &PhyloTree<T>,
    rp: RateParams<T>,
    root_state: RootState,
    rng: &mut R,
) -> Result<BTreeMap<String, u8>> {
    rp.check()?;
    let rates = rp.rates();
    let rate = [rates.q_gain.as_f64(), rates.q_loss.as_f64()];
    let p = rp.p.as_f64();
    let mut state = vec![0u8; tree.n_nodes()];
    let mut out = BTreeMap::new();
    for id in tree.preorder() {
        let node = tree.node(id);
        state[id] = match node.parent {
            None => match root_state {
                RootState::Zero => 0,
                RootState::One => 1,
                RootState::Stationary => u8::from(rng.random::<f64>() < p),
            },
            Some(parent) => {
                let mut current = state[parent];
                let mut remaining = node.branch_length.as_f64();
                loop {
                    let wait: f64 = Exp1.sample(rng);
                    let wait = wait / rate[current as usize];
                    if wait >= remaining {
                        break;
                    }
                    remaining -= wait;
                    current = 1 - current;
                }
                current
            }
        };
        if node.is_tip() {
            out.insert(node.label.clone().unwrap_or_default(), state[id]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::parse_newick;

    fn rp(s: f64, p: f64) -> RateParams<f64> {
        RateParams::new(s, p).unwrap()
    }

    #[test]
    fn rate_construction() {
        let r = rates_from_params(rp(2.0, 0.25));
        assert_eq!((r.q_gain, r.q_loss), (0.5, 1.5));
        let r = rates_from_params(rp(1.0, 0.5));
        assert_eq!((r.q_gain, r.q_loss), (0.5, 0.5));
        assert_eq!(r.speed(), 1.0);
        assert!(RateParams::new(0.0, 0.5).is_err());
        assert!(RateParams::new(1.0, 1.0).is_err());
        assert!(RateParams::new(1.0, f64::NAN).is_err());
    }

    #[test]
    fn zero_time_is_identity() {
        let m = transition_matrix(rp(3.0, 0.3), 0.0).unwrap();
        assert_eq!(m, [[1.0, 0.0], [0.0, 1.0]]);
        assert!(transition_matrix(rp(3.0, 0.3), -1.0).is_err());
    }

    #[test]
    fn long_time_reaches_stationarity() {
        let m = transition_matrix(rp(2.0, 0.25), 1000.0).unwrap();
        for row in m {
            assert!((row[0] - 0.75).abs() < 1e-12);
            assert!((row[1] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn half_life_example() {
        // e^{-ln 2} = 1/2, so P11 = 0.5 + 0.5 * 0.5
        let m = transition_matrix(rp(1.0, 0.5), std::f64::consts::LN_2).unwrap();
        assert!((m[1][1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn small_st_keeps_precision() {
        let m = transition_matrix(rp(1e-12, 0.5), 1.0).unwrap();
        assert!((m[0][1] - 0.5e-12).abs() < 1e-24);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (s, p, t) = (1.7, 0.35, 0.8);
        let (_, ds, dp) = transition_with_gradient(rp(s, p), t);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..2 {
                let fd_s = (transition_unchecked(rp(s + h, p), t)[i][j]
                    - transition_unchecked(rp(s - h, p), t)[i][j])
                    / (2.0 * h);
                let fd_p = (transition_unchecked(rp(s, p + h), t)[i][j]
                    - transition_unchecked(rp(s, p - h), t)[i][j])
                    / (2.0 * h);
                assert!((fd_s - ds[i][j]).abs() < 1e-8);
                assert!((fd_p - dp[i][j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn single_precision_rows_sum_to_one() {
        let m = transition_matrix(RateParams::new(2.0f32, 0.3).unwrap(), 0.7).unwrap();
        for row in m {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn frozen_process_keeps_root_state() {
        let tree = parse_newick::<f64>("((A:1,B:1):1,(C:0.5,D:0.5):1.5);").unwrap();
        for root in [RootState::Zero, RootState::One] {
            let tips = simulate_history(&tree, rp(1e-12, 0.5), root, 3).unwrap();
            let want = if root == RootState::One { 1 } else { 0 };
            assert!(tips.values().all(|&v| v == want));
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let tree = crate::trees::simulate_coalescent(20, 1).unwrap();
        let a = simulate_history(&tree, rp(2.0, 0.4), RootState::Stationary, 99).unwrap();
        let b = simulate_history(&tree, rp(2.0, 0.4), RootState::Stationary, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
    }

    #[test]
    fn long_branches_forget_the_root() {
        // s * t = 50: tips are effectively independent draws from (1 - p, p).
        let tree = parse_newick::<f64>("(A:25,B:25);").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ones = 0usize;
        let reps = 10_000;
        for _ in 0..reps {
            let tips = simulate_history_with(&tree, rp(2.0, 0.3), RootState::Zero, &mut rng).unwrap();
            ones += tips.values().map(|&v| v as usize).sum::<usize>();
        }
        let frac = ones as f64 / (2 * reps) as f64;
        assert!((frac - 0.3).abs() < 0.02, "fraction {frac}");
    }
}
