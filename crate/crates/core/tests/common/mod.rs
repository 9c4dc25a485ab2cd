//! Test-only oracles, written without reference to the library's closed forms.
#![allow(dead_code)]

use std::collections::BTreeMap;

use colexphylo::likelihood::{TipStates, TraitState};
use colexphylo::trees::PhyloTree;
use rand::Rng;

pub type M2 = [[f64; 2]; 2];

fn mat_mul(a: &M2, b: &M2) -> M2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// exp(A) by scaling and squaring with a truncated Taylor series.
pub fn expm(a: &M2) -> M2 {
    let norm = a.iter().map(|r| r[0].abs() + r[1].abs()).fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let b = [[a[0][0] * scale, a[0][1] * scale], [a[1][0] * scale, a[1][1] * scale]];
    let mut sum = [[1.0, 0.0], [0.0, 1.0]];
    let mut term = sum;
    for k in 1..=24 {
        term = mat_mul(&term, &b);
        for row in term.iter_mut() {
            for v in row.iter_mut() {
                *v /= k as f64;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                sum[i][j] += term[i][j];
            }
        }
    }
    for _ in 0..squarings {
        sum = mat_mul(&sum, &sum);
    }
    sum
}

/// exp(Q t) for the generator with gain rate s p and loss rate s (1 - p).
pub fn transition_oracle(s: f64, p: f64, t: f64) -> M2 {
    let g = s * p;
    let l = s * (1.0 - p);
    expm(&[[-g * t, g * t], [l * t, -l * t]])
}

/// Likelihood by summing over every joint assignment of node states, with a
/// stationary root and missing tips summed out.
pub fn brute_force_loglik(tree: &PhyloTree<f64>, tips: &BTreeMap<String, TraitState>, s: f64, p: f64) -> f64 {
    let nodes = tree.nodes();
    let n = nodes.len();
    assert!(n <= 20, "brute force limited to small trees");
    let edge_p: Vec<Option<M2>> = nodes
        .iter()
        .map(|node| node.parent.map(|_| transition_oracle(s, p, node.branch_length)))
        .collect();
    let mut total = 0.0;
    'assign: for mask in 0u32..(1 << n) {
        let state = |i: usize| ((mask >> i) & 1) as usize;
        for (i, node) in nodes.iter().enumerate() {
            if node.children.is_empty() {
                let label = node.label.as_deref().unwrap();
                match tips.get(label).copied().unwrap_or(TraitState::Missing) {
                    TraitState::Absent if state(i) != 0 => continue 'assign,
                    TraitState::Present if state(i) != 1 => continue 'assign,
                    _ => {}
                }
            }
        }
        let root = tree.root();
        let mut prob = if state(root) == 1 { p } else { 1.0 - p };
        for (i, node) in nodes.iter().enumerate() {
            if let Some(parent) = node.parent {
                prob *= edge_p[i].unwrap()[state(parent)][state(i)];
            }
        }
        total += prob;
    }
    total.ln()
}

/// Random rooted tree on `n_tips` taxa `t0..`; merges two or three lineages at
/// a time when `polytomies` is set. Some internal branches have length zero.
pub fn random_newick<R: Rng + ?Sized>(rng: &mut R, n_tips: usize, polytomies: bool) -> String {
    let mut pool: Vec<String> = (0..n_tips).map(|i| format!("t{i}")).collect();
    let len = |rng: &mut R, internal: bool| -> f64 {
        if internal && rng.random::<f64>() < 0.1 {
            0.0
        } else {
            rng.random_range(0.01..2.0)
        }
    };
    while pool.len() > 1 {
        let k = if polytomies && pool.len() >= 3 && rng.random::<f64>() < 0.3 { 3 } else { 2 };
        let mut group = Vec::new();
        for _ in 0..k {
            let i = rng.random_range(0..pool.len());
            let sub = pool.swap_remove(i);
            let internal = sub.starts_with('(');
            group.push(format!("{sub}:{:.6}", len(rng, internal)));
        }
        pool.push(format!("({})", group.join(",")));
    }
    if n_tips == 1 {
        format!("({}:{:.6});", pool[0], len(rng, false))
    } else {
        format!("{};", pool[0])
    }
}

pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, n_tips: usize, polytomies: bool) -> PhyloTree<f64> {
    random_newick(rng, n_tips, polytomies).parse().expect("generated Newick parses")
}

pub fn random_state<R: Rng + ?Sized>(rng: &mut R, p_missing: f64) -> TraitState {
    if rng.random::<f64>() < p_missing {
        TraitState::Missing
    } else if rng.random::<bool>() {
        TraitState::Present
    } else {
        TraitState::Absent
    }
}

pub fn random_tips<R: Rng + ?Sized>(rng: &mut R, tree: &PhyloTree<f64>, p_missing: f64) -> TipStates {
    let mut tips = TipStates::new("c");
    for label in tree.tip_labels() {
        tips = tips.with(&label, random_state(rng, p_missing));
    }
    tips
}

/// Central differences with a relative step.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h_rel: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = h_rel * x[i].abs().max(1.0);
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Random family: tree, characters with missing cells, standard-normal predictors.
pub fn random_family<R: Rng + ?Sized>(
    rng: &mut R,
    n_tips: usize,
    n_chars: usize,
    k: usize,
) -> colexphylo::model::FamilyData<f64> {
    use colexphylo::likelihood::PruningTree;
    use rand_distr::StandardNormal;
    let tree = random_tree(rng, n_tips, true);
    let plan = PruningTree::new(&tree);
    let n = plan.taxa().len();
    let states = (0..n_chars).map(|_| (0..n).map(|_| random_state(rng, 0.2)).collect()).collect();
    let x = (0..n_chars).map(|_| (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let ids = (0..n_chars).map(|j| format!("c{j}")).collect();
    colexphylo::model::FamilyData::from_parts(plan, ids, states, x).unwrap()
}

pub fn predictor_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("x{i}")).collect()
}

/// Negative binomial draw with mean `mu` and variance `mu + mu^2 / theta`.
pub fn nb_draw<R: Rng + ?Sized>(rng: &mut R, mu: f64, theta: f64) -> u64 {
    use rand_distr::{Distribution, Gamma, Poisson};
    let lambda = Gamma::new(theta, mu / theta).unwrap().sample(rng);
    if lambda <= 0.0 {
        0
    } else {
        Poisson::new(lambda).unwrap().sample(rng) as u64
    }
}

/// Synthetic count regression: `n` rows, `k` standard-normal predictors, log link.
pub fn nb_dataset<R: Rng + ?Sized>(rng: &mut R, n: usize, beta: &[f64], theta: f64) -> colexphylo::negbin::CountDataset {
    use rand_distr::StandardNormal;
    let k = beta.len() - 1;
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    let y = x
        .iter()
        .map(|row| {
            let eta = beta[0] + row.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            nb_draw(rng, eta.exp(), theta)
        })
        .collect();
    colexphylo::negbin::CountDataset::new(
        (0..n).map(|i| format!("r{i}")).collect(),
        predictor_names(k),
        x,
        y,
    )
    .unwrap()
}
