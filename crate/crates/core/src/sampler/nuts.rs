//! Single-chain No-U-Turn sampler: multinomial trajectory sampling with the
//! generalised no-U-turn criterion, dual-averaging step size and windowed
//! diagonal metric adaptation.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::LogDensity;
use crate::error::{Error, Result};
use crate::real::log_add_exp;

/// Energy error beyond which a trajectory is declared divergent.
const MAX_DELTA_H: f64 = 1000.0;
const INIT_RETRIES: usize = 100;

#[derive(Debug, Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

struct Hamiltonian<'a, D: ?Sized> {
    target: &'a D,
    inv_metric: Vec<f64>,
}

impl<D: LogDensity + ?Sized> Hamiltonian<'_, D> {
    fn evaluate(&self, z: &mut Point) {
        let lp = self.target.log_density_grad(&z.q, &mut z.grad);
        z.logp = if lp.is_nan() || z.grad.iter().any(|g| !g.is_finite()) {
            f64::NEG_INFINITY
        } else {
            lp
        };
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(x, m)| x * x * m).sum::<f64>()
    }

    fn energy(&self, z: &Point) -> f64 {
        let h = -z.logp + self.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    /// `M^{-1} p`
    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(x, m)| x * m).collect()
    }

    fn sample_momentum(&self, z: &mut Point, rng: &mut dyn RngCore) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        let half = 0.5 * eps;
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        self.evaluate(z);
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Per-trajectory accumulators.
struct Trajectory {
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

struct Edge {
    p: Vec<f64>,
    p_sharp: Vec<f64>,
}

/// Outcome of one NUTS transition.
#[derive(Debug, Clone)]
pub struct Transition {
    pub accept_stat: f64,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
}

struct Nuts<'a, D: ?Sized> {
    ham: Hamiltonian<'a, D>,
    eps: f64,
    max_depth: usize,
}

impl<D: LogDensity + ?Sized> Nuts<'_, D> {
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        beg: &mut Edge,
        end: &mut Edge,
        rho: &mut Vec<f64>,
        h0: f64,
        sign: f64,
        log_sum_weight: &mut f64,
        traj: &mut Trajectory,
        rng: &mut dyn RngCore,
    ) -> bool {
        if depth == 0 {
            self.ham.leapfrog(z, sign * self.eps);
            traj.n_leapfrog += 1;
            let h = self.ham.energy(z);
            if h - h0 > MAX_DELTA_H {
                traj.divergent = true;
            }
            *log_sum_weight = log_add_exp(*log_sum_weight, h0 - h);
            traj.sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            beg.p_sharp = self.ham.velocity(&z.p);
            end.p_sharp.clone_from(&beg.p_sharp);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            beg.p.clone_from(&z.p);
            end.p.clone_from(&z.p);
            return !traj.divergent;
        }

        let dim = z.q.len();
        let mut init_end = Edge { p: vec![0.0; dim], p_sharp: vec![0.0; dim] };
        let mut rho_init = vec![0.0; dim];
        let mut lsw_init = f64::NEG_INFINITY;
        if !self.build_tree(depth - 1, z, z_propose, beg, &mut init_end, &mut rho_init, h0, sign, &mut lsw_init, traj, rng) {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut final_beg = Edge { p: vec![0.0; dim], p_sharp: vec![0.0; dim] };
        let mut rho_final = vec![0.0; dim];
        let mut lsw_final = f64::NEG_INFINITY;
        if !self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut final_beg,
            end,
            &mut rho_final,
            h0,
            sign,
            &mut lsw_final,
            traj,
            rng,
        ) {
            return false;
        }

        let lsw_subtree = log_add_exp(lsw_init, lsw_final);
        *log_sum_weight = log_add_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_propose_final;
        }

        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = no_u_turn(&beg.p_sharp, &end.p_sharp, &rho_subtree);
        persist &= no_u_turn(&beg.p_sharp, &final_beg.p_sharp, &add(&rho_init, &final_beg.p));
        persist &= no_u_turn(&init_end.p_sharp, &end.p_sharp, &add(&rho_final, &init_end.p));
        persist
    }

    fn transition(&self, current: &mut Point, rng: &mut dyn RngCore) -> Transition {
        let mut z = current.clone();
        self.ham.sample_momentum(&mut z, rng);
        let h0 = self.ham.energy(&z);
        let v0 = self.ham.velocity(&z.p);

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();
        let edge = || Edge { p: z.p.clone(), p_sharp: v0.clone() };
        let (mut fwd_bck, mut fwd_fwd, mut bck_fwd, mut bck_bck) = (edge(), edge(), edge(), edge());
        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0;
        let mut traj = Trajectory { n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false };
        let dim = z.q.len();
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid = if rng.random::<f64>() > 0.5 {
                rho_bck.clone_from(&rho);
                bck_fwd.p.clone_from(&fwd_bck.p);
                bck_fwd.p_sharp.clone_from(&fwd_bck.p_sharp);
                let ok = self.build_tree(
                    depth,
                    &mut z_fwd,
                    &mut z_propose,
                    &mut fwd_bck,
                    &mut fwd_fwd,
                    &mut rho_fwd,
                    h0,
                    1.0,
                    &mut lsw_subtree,
                    &mut traj,
                    rng,
                );
                ok
            } else {
                rho_fwd.clone_from(&rho);
                fwd_bck.p.clone_from(&bck_fwd.p);
                fwd_bck.p_sharp.clone_from(&bck_fwd.p_sharp);
                self.build_tree(
                    depth,
                    &mut z_bck,
                    &mut z_propose,
                    &mut bck_fwd,
                    &mut bck_bck,
                    &mut rho_bck,
                    h0,
                    -1.0,
                    &mut lsw_subtree,
                    &mut traj,
                    rng,
                )
            };
            if !valid {
                break;
            }
            depth += 1;

            if lsw_subtree > log_sum_weight || rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                z_sample.clone_from(&z_propose);
            }
            log_sum_weight = log_add_exp(log_sum_weight, lsw_subtree);

            rho = add(&rho_bck, &rho_fwd);
            let mut persist = no_u_turn(&bck_bck.p_sharp, &fwd_fwd.p_sharp, &rho);
            persist &= no_u_turn(&bck_bck.p_sharp, &fwd_bck.p_sharp, &add(&rho_bck, &fwd_bck.p));
            persist &= no_u_turn(&bck_fwd.p_sharp, &fwd_fwd.p_sharp, &add(&rho_fwd, &bck_fwd.p));
            if !persist {
                break;
            }
        }

        let energy = self.ham.energy(&z_sample);
        *current = z_sample;
        Transition {
            accept_stat: if traj.n_leapfrog > 0 { traj.sum_metro_prob / traj.n_leapfrog as f64 } else { 0.0 },
            depth,
            n_leapfrog: traj.n_leapfrog,
            divergent: traj.divergent,
            energy,
        }
    }

    fn probe(&self, at: &Point, eps: f64, rng: &mut dyn RngCore) -> f64 {
        let mut z = at.clone();
        self.ham.sample_momentum(&mut z, rng);
        let h0 = self.ham.energy(&z);
        self.ham.leapfrog(&mut z, eps);
        h0 - self.ham.energy(&z)
    }

    /// Step-size search heuristic: double or halve until the one-step
    /// acceptance crosses 0.8.
    fn init_stepsize(&mut self, at: &Point, rng: &mut dyn RngCore) -> Result<()> {
        let target = 0.8f64.ln();
        let delta = self.probe(at, self.eps, rng);
        let up = delta > target;
        loop {
            let delta = self.probe(at, self.eps, rng);
            if (up && !(delta > target)) || (!up && !(delta < target)) {
                break;
            }
            self.eps = if up { 2.0 * self.eps } else { 0.5 * self.eps };
            if self.eps > 1e7 {
                return Err(Error::Config("step size search diverged: posterior appears improper".into()));
            }
            if self.eps == 0.0 {
                return Err(Error::Config("step size collapsed to zero".into()));
            }
        }
        Ok(())
    }
}

/// Dual averaging of the log step size towards a target acceptance rate.
#[derive(Debug, Clone)]
struct StepSizeAdapter {
    delta: f64,
    gamma: f64,
    kappa: f64,
    t0: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl StepSizeAdapter {
    fn new(delta: f64) -> Self {
        StepSizeAdapter { delta, gamma: 0.05, kappa: 0.75, t0: 10.0, mu: 0.0, counter: 0.0, s_bar: 0.0, x_bar: 0.0 }
    }

    fn restart(&mut self, eps: f64) {
        self.mu = (10.0 * eps).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_stepsize(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Welford accumulator for per-coordinate variances.
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.n as f64;
            *s += d * (v - *m);
        }
    }

    fn variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2.iter().map(|s| s / (n - 1.0)).collect()
    }
}

/// Warmup schedule: a fast step-size-only buffer, doubling slow windows for
/// the metric, then a final step-size-only buffer.
#[derive(Debug, Clone)]
struct WindowSchedule {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    enabled: bool,
}

impl WindowSchedule {
    fn new(warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base) = (75, 50, 25);
        let enabled = warmup >= 20;
        if enabled && init_buffer + term_buffer + base > warmup {
            init_buffer = (0.15 * warmup as f64) as usize;
            term_buffer = (0.1 * warmup as f64) as usize;
            base = warmup - (init_buffer + term_buffer);
        }
        WindowSchedule {
            warmup,
            init_buffer,
            term_buffer,
            window_size: base,
            next_window: (init_buffer + base).saturating_sub(1),
            counter: 0,
            enabled,
        }
    }

    fn in_window(&self) -> bool {
        self.enabled
            && self.counter >= self.init_buffer
            && self.counter < self.warmup - self.term_buffer
            && self.counter != self.warmup
    }

    fn window_ends(&self) -> bool {
        self.enabled && self.counter == self.next_window && self.counter != self.warmup
    }

    fn advance_window(&mut self) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.warmup - self.term_buffer {
            self.next_window = last;
        }
    }
}

/// Raw output of one chain (unconstrained positions, post-warmup only).
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub transitions: Vec<Transition>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub max_depth_hits: usize,
}

pub struct ChainSettings {
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    pub init_radius: f64,
}

/// Runs one chain from a jittered initial point.
pub fn run_chain<D: LogDensity + ?Sized>(target: &D, settings: &ChainSettings, rng: &mut dyn RngCore) -> Result<ChainOutput> {
    let dim = target.dim();
    let ham = Hamiltonian { target, inv_metric: vec![1.0; dim] };

    let mut z = Point { q: vec![0.0; dim], p: vec![0.0; dim], grad: vec![0.0; dim], logp: f64::NEG_INFINITY };
    let mut found = false;
    for _ in 0..INIT_RETRIES {
        z.q = target.initial_point(rng, settings.init_radius);
        ham.evaluate(&mut z);
        if z.logp.is_finite() {
            found = true;
            break;
        }
    }
    if !found {
        return Err(Error::Initialization(INIT_RETRIES));
    }

    let mut nuts = Nuts { ham, eps: 1.0, max_depth: settings.max_depth };
    nuts.init_stepsize(&z, rng)?;
    let mut stepper = StepSizeAdapter::new(settings.target_accept);
    stepper.restart(nuts.eps);
    let mut schedule = WindowSchedule::new(settings.warmup);
    let mut estimator = Welford::new(dim);

    for _ in 0..settings.warmup {
        let t = nuts.transition(&mut z, rng);
        nuts.eps = stepper.learn(t.accept_stat);
        if schedule.in_window() {
            estimator.add(&z.q);
        }
        if schedule.window_ends() {
            schedule.advance_window();
            let n = estimator.n as f64;
            nuts.ham.inv_metric = estimator
                .variance()
                .into_iter()
                .map(|v| (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0)))
                .collect();
            estimator = Welford::new(dim);
            // the gradient is unchanged, but the kinetic energy scale is new
            nuts.init_stepsize(&z, rng)?;
            stepper.restart(nuts.eps);
        }
        schedule.counter += 1;
    }
    if settings.warmup > 0 {
        nuts.eps = stepper.final_stepsize();
    }

    let mut draws = Vec::with_capacity(settings.samples);
    let mut transitions = Vec::with_capacity(settings.samples);
    let mut max_depth_hits = 0;
    for _ in 0..settings.samples {
        let t = nuts.transition(&mut z, rng);
        if t.depth >= settings.max_depth {
            max_depth_hits += 1;
        }
        draws.push(z.q.clone());
        transitions.push(t);
    }
    Ok(ChainOutput { draws, transitions, step_size: nuts.eps, inv_metric: nuts.ham.inv_metric, max_depth_hits })
}
