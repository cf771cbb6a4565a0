//! Multinomial NUTS with dual-averaging step size and windowed diagonal metric.

use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::draws::{ChainDraws, PosteriorDraws};
use crate::error::{Error, Result};
use crate::seeds::{derive_seed, stream, Purpose};

/// Energy error above which a transition is flagged divergent.
pub const MAX_DELTA_H: f64 = 1000.0;
pub const MAX_INIT_ATTEMPTS: usize = 100;
/// Half-width of the uniform initialization box.
pub const INIT_RADIUS: f64 = 2.0;

/// Log density over an unconstrained space.
pub trait Target: Clone + Send + Sync {
    fn dim(&self) -> usize;
    /// Log density and gradient; errors and non-finite values mark the point as outside the support.
    fn log_density_grad(&mut self, q: &[f64]) -> Result<(f64, Vec<f64>)>;
    /// Names of the recorded output coordinates.
    fn output_names(&self) -> Vec<String>;
    /// Recorded output for an unconstrained point.
    fn output(&self, q: &[f64]) -> Vec<f64>;
    /// Center of the initialization box.
    fn init_center(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub total_iters: usize,
    pub thin: usize,
    pub adapt_delta: f64,
    pub max_treedepth: u32,
    pub seed: u64,
    /// Run chains concurrently.
    pub parallel: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { chains: 4, warmup: 1000, total_iters: 3000, thin: 2, adapt_delta: 0.95, max_treedepth: 10, seed: 1, parallel: true }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.chains == 0 {
            return bad("chains must be positive");
        }
        if self.warmup >= self.total_iters {
            return bad("warmup must be below total_iters");
        }
        if self.thin == 0 {
            return bad("thin must be at least 1");
        }
        if !(self.adapt_delta > 0.0 && self.adapt_delta < 1.0) {
            return bad("adapt_delta must lie in (0, 1)");
        }
        if self.max_treedepth == 0 {
            return bad("max_treedepth must be positive");
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.total_iters - self.warmup).div_ceil(self.thin)
    }
}

/// Uniform point in `(-2, 2)^dim`, reproducible per (seed, chain, attempt).
pub fn init_jitter(dim: usize, seed: u64, chain: usize, attempt: usize) -> Vec<f64> {
    let mut rng = stream(derive_seed(seed, Purpose::Chain, chain as u64), Purpose::Aux, attempt as u64);
    (0..dim).map(|_| rng.random_range(-INIT_RADIUS..INIT_RADIUS)).collect()
}

#[derive(Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
}

struct Hamiltonian<'a, T: Target> {
    target: &'a mut T,
    inv_metric: Vec<f64>,
}

impl<T: Target> Hamiltonian<'_, T> {
    fn evaluate(&mut self, q: &[f64]) -> (f64, Vec<f64>) {
        match self.target.log_density_grad(q) {
            Ok((lp, g)) if lp.is_finite() && g.iter().all(|v| v.is_finite()) => (lp, g),
            _ => (f64::NEG_INFINITY, vec![0.0; q.len()]),
        }
    }

    fn energy(&self, z: &Point) -> f64 {
        let kin: f64 = z.p.iter().zip(&self.inv_metric).map(|(p, m)| m * p * p).sum::<f64>() / 2.0;
        let h = kin - z.logp;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, z: &Point) -> Vec<f64> {
        z.p.iter().zip(&self.inv_metric).map(|(p, m)| m * p).collect()
    }

    fn draw_momentum(&self, z: &mut Point, rng: &mut ChaCha8Rng) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let e: f64 = StandardNormal.sample(rng);
            *p = e / m.sqrt();
        }
    }

    fn leapfrog(&mut self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        let (lp, g) = self.evaluate(&z.q);
        z.logp = lp;
        z.grad = g;
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
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

/// Bookkeeping shared by a whole trajectory.
struct Walk {
    h0: f64,
    eps: f64,
    n_leapfrog: u32,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Edge momenta and sums of a subtree.
struct Edges {
    p_sharp_beg: Vec<f64>,
    p_sharp_end: Vec<f64>,
    p_beg: Vec<f64>,
    p_end: Vec<f64>,
    rho: Vec<f64>,
    log_sum_weight: f64,
}

/// Extends the trajectory from `z` by `2^depth` leapfrog steps. Returns
/// (valid, proposal, edges).
fn build_tree<T: Target>(
    ham: &mut Hamiltonian<'_, T>,
    walk: &mut Walk,
    z: &mut Point,
    depth: u32,
    rng: &mut ChaCha8Rng,
) -> (bool, Point, Edges) {
    if depth == 0 {
        ham.leapfrog(z, walk.eps);
        walk.n_leapfrog += 1;
        let h = ham.energy(z);
        if h - walk.h0 > MAX_DELTA_H {
            walk.divergent = true;
        }
        let lw = walk.h0 - h;
        walk.sum_metro_prob += if lw > 0.0 { 1.0 } else { lw.exp() };
        let ps = ham.p_sharp(z);
        let edges = Edges {
            p_sharp_beg: ps.clone(),
            p_sharp_end: ps,
            p_beg: z.p.clone(),
            p_end: z.p.clone(),
            rho: z.p.clone(),
            log_sum_weight: lw,
        };
        return (!walk.divergent, z.clone(), edges);
    }
    let (ok, prop_init, init) = build_tree(ham, walk, z, depth - 1, rng);
    if !ok {
        return (false, prop_init, init);
    }
    let (ok, prop_final, fin) = build_tree(ham, walk, z, depth - 1, rng);
    if !ok {
        return (false, prop_final, fin);
    }
    let lsw = log_sum_exp(init.log_sum_weight, fin.log_sum_weight);
    let proposal = if fin.log_sum_weight > lsw || rng.random::<f64>() < (fin.log_sum_weight - lsw).exp() {
        prop_final
    } else {
        prop_init
    };
    let rho = add(&init.rho, &fin.rho);
    let mut persist = no_u_turn(&init.p_sharp_beg, &fin.p_sharp_end, &rho);
    persist &= no_u_turn(&init.p_sharp_beg, &fin.p_sharp_beg, &add(&init.rho, &fin.p_beg));
    persist &= no_u_turn(&init.p_sharp_end, &fin.p_sharp_end, &add(&fin.rho, &init.p_end));
    let edges = Edges {
        p_sharp_beg: init.p_sharp_beg,
        p_sharp_end: fin.p_sharp_end,
        p_beg: init.p_beg,
        p_end: fin.p_end,
        rho,
        log_sum_weight: lsw,
    };
    (persist, proposal, edges)
}

struct Transition {
    accept_stat: f64,
    treedepth: u32,
    n_leapfrog: u32,
    divergent: bool,
    energy: f64,
}

fn transition<T: Target>(
    ham: &mut Hamiltonian<'_, T>,
    current: &mut Point,
    eps: f64,
    max_depth: u32,
    rng: &mut ChaCha8Rng,
) -> Transition {
    ham.draw_momentum(current, rng);
    let h0 = ham.energy(current);
    let mut walk = Walk { h0, eps, n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false };

    // tree ends in time order
    let mut left = current.clone();
    let mut right = current.clone();
    let ps = ham.p_sharp(current);
    let (mut p_sharp_left, mut p_sharp_right) = (ps.clone(), ps);
    let (mut p_left, mut p_right) = (current.p.clone(), current.p.clone());
    let mut rho = current.p.clone();
    let mut log_sum_weight = 0.0;
    let mut sample = current.clone();
    let mut depth = 0;

    while depth < max_depth {
        let forward = rng.random::<f64>() > 0.5;
        let (ok, proposal, sub) = if forward {
            walk.eps = eps;
            build_tree(ham, &mut walk, &mut right, depth, rng)
        } else {
            walk.eps = -eps;
            build_tree(ham, &mut walk, &mut left, depth, rng)
        };
        if !ok {
            break;
        }
        depth += 1;
        if sub.log_sum_weight > log_sum_weight || rng.random::<f64>() < (sub.log_sum_weight - log_sum_weight).exp() {
            sample = proposal;
        }
        log_sum_weight = log_sum_exp(log_sum_weight, sub.log_sum_weight);
        let rho_old = std::mem::replace(&mut rho, Vec::new());
        rho = add(&rho_old, &sub.rho);

        let (far_sharp, near_sharp, near_p) = if forward {
            (&p_sharp_left, &p_sharp_right, &p_right)
        } else {
            (&p_sharp_right, &p_sharp_left, &p_left)
        };
        let mut persist = no_u_turn(far_sharp, &sub.p_sharp_beg, &add(&rho_old, &sub.p_beg));
        persist &= no_u_turn(near_sharp, &sub.p_sharp_end, &add(&sub.rho, near_p));
        if forward {
            p_sharp_right = sub.p_sharp_end;
            p_right = sub.p_end;
        } else {
            p_sharp_left = sub.p_sharp_end;
            p_left = sub.p_end;
        }
        persist &= no_u_turn(&p_sharp_left, &p_sharp_right, &rho);
        if !persist {
            break;
        }
    }
    *current = sample;
    let accept_stat = if walk.n_leapfrog > 0 { walk.sum_metro_prob / walk.n_leapfrog as f64 } else { 0.0 };
    Transition { accept_stat, treedepth: depth, n_leapfrog: walk.n_leapfrog, divergent: walk.divergent, energy: ham.energy(current) }
}

/// Dual-averaging step-size adaptation.
struct StepSizeAdapter {
    delta: f64,
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
}

impl StepSizeAdapter {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(delta: f64, eps: f64) -> Self {
        Self { delta, mu: (10.0 * eps).ln(), s_bar: 0.0, x_bar: 0.0, counter: 0.0 }
    }

    fn restart(&mut self, eps: f64) {
        *self = Self::new(self.delta, eps);
    }

    fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let w = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Expanding-window variance estimation (75 / 25 doubling / 50 schedule).
struct MetricAdapter {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window: usize,
    next_end: usize,
    counter: usize,
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MetricAdapter {
    fn new(warmup: usize, dim: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut window) = (75, 50, 25);
        if warmup < 20 {
            // no metric adaptation
            init_buffer = warmup;
            term_buffer = 0;
            window = 0;
        } else if init_buffer + term_buffer + window > warmup {
            init_buffer = (0.15 * warmup as f64) as usize;
            term_buffer = (0.1 * warmup as f64) as usize;
            window = warmup - init_buffer - term_buffer;
        }
        Self {
            warmup,
            init_buffer,
            term_buffer,
            window,
            next_end: (init_buffer + window).saturating_sub(1),
            counter: 0,
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn in_window(&self) -> bool {
        self.window > 0
            && self.counter >= self.init_buffer
            && self.counter < self.warmup - self.term_buffer
            && self.counter != self.warmup
    }

    fn window_ends(&self) -> bool {
        self.window > 0 && self.counter == self.next_end && self.counter != self.warmup
    }

    fn advance_window(&mut self) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_end == last {
            return;
        }
        self.window *= 2;
        self.next_end = self.counter + self.window;
        if self.next_end != last && self.next_end + 2 * self.window >= self.warmup - self.term_buffer {
            self.next_end = last;
        }
    }

    /// Records a warmup draw; returns a new inverse metric at window ends.
    fn learn(&mut self, q: &[f64]) -> Option<Vec<f64>> {
        if self.in_window() {
            self.n += 1.0;
            for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(q) {
                let d = x - *m;
                *m += d / self.n;
                *s += d * (x - *m);
            }
        }
        let out = if self.window_ends() {
            self.advance_window();
            let n = self.n;
            let var = self
                .m2
                .iter()
                .map(|s| {
                    let v = s / (n - 1.0);
                    (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0))
                })
                .collect();
            self.n = 0.0;
            self.mean.iter_mut().for_each(|v| *v = 0.0);
            self.m2.iter_mut().for_each(|v| *v = 0.0);
            Some(var)
        } else {
            None
        };
        self.counter += 1;
        out
    }
}

/// Doubling/halving search for a step size with one-step acceptance near 0.8.
fn initial_step_size<T: Target>(ham: &mut Hamiltonian<'_, T>, z: &Point, mut eps: f64, rng: &mut ChaCha8Rng) -> f64 {
    let target = 0.8f64.ln();
    let try_step = |ham: &mut Hamiltonian<'_, T>, eps: f64, rng: &mut ChaCha8Rng| {
        let mut w = z.clone();
        ham.draw_momentum(&mut w, rng);
        let h0 = ham.energy(&w);
        ham.leapfrog(&mut w, eps);
        let d = h0 - ham.energy(&w);
        if d.is_nan() {
            f64::NEG_INFINITY
        } else {
            d
        }
    };
    let up = try_step(ham, eps, rng) > target;
    for _ in 0..100 {
        let d = try_step(ham, eps, rng);
        if (up && !(d > target)) || (!up && !(d < target)) {
            break;
        }
        eps = if up { 2.0 * eps } else { 0.5 * eps };
        if !(1e-12..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-12, 1e7)
}

fn run_chain<T: Target>(mut target: T, config: &SamplerConfig, chain: usize) -> Result<ChainDraws> {
    let dim = target.dim();
    let center = target.init_center();
    let mut start = None;
    for attempt in 0..MAX_INIT_ATTEMPTS {
        let q: Vec<f64> = init_jitter(dim, config.seed, chain, attempt).iter().zip(&center).map(|(u, c)| c + u).collect();
        if let Ok((lp, g)) = target.log_density_grad(&q) {
            if lp.is_finite() && g.iter().all(|v| v.is_finite()) {
                start = Some(Point { p: vec![0.0; dim], q, logp: lp, grad: g });
                break;
            }
        }
    }
    let mut z = start.ok_or(Error::InitializationFailure(MAX_INIT_ATTEMPTS))?;
    let mut rng = stream(config.seed, Purpose::Chain, chain as u64);
    let clock = Instant::now();
    let mut ham = Hamiltonian { target: &mut target, inv_metric: vec![1.0; dim] };

    let mut eps = initial_step_size(&mut ham, &z, 1.0, &mut rng);
    let mut step = StepSizeAdapter::new(config.adapt_delta, eps);
    let mut metric = MetricAdapter::new(config.warmup, dim);
    for _ in 0..config.warmup {
        let tr = transition(&mut ham, &mut z, eps, config.max_treedepth, &mut rng);
        eps = step.learn(tr.accept_stat);
        if let Some(var) = metric.learn(&z.q) {
            ham.inv_metric = var;
            eps = initial_step_size(&mut ham, &z, eps, &mut rng);
            step.restart(eps);
        }
    }
    if config.warmup > 0 {
        eps = step.final_step();
    }

    let post = config.total_iters - config.warmup;
    let mut out = ChainDraws {
        chain_id: chain,
        draws: Vec::with_capacity(config.retained_per_chain()),
        divergent: Vec::with_capacity(post),
        treedepth: Vec::with_capacity(post),
        energy: Vec::with_capacity(post),
        accept_stat: Vec::with_capacity(post),
        n_leapfrog: Vec::with_capacity(post),
        step_size: eps,
        inv_metric: ham.inv_metric.clone(),
        wall_seconds: 0.0,
    };
    for i in 0..post {
        let tr = transition(&mut ham, &mut z, eps, config.max_treedepth, &mut rng);
        out.divergent.push(tr.divergent);
        out.treedepth.push(tr.treedepth);
        out.energy.push(tr.energy);
        out.accept_stat.push(tr.accept_stat);
        out.n_leapfrog.push(tr.n_leapfrog);
        if i % config.thin == 0 {
            out.draws.push(ham.target.output(&z.q));
        }
    }
    out.wall_seconds = clock.elapsed().as_secs_f64();
    Ok(out)
}

/// Runs all chains of `config` on clones of `target`.
pub fn sample<T: Target>(target: &T, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let run = |c: usize| run_chain(target.clone(), config, c);
    let chains: Result<Vec<ChainDraws>> = if config.parallel {
        (0..config.chains).into_par_iter().map(run).collect()
    } else {
        (0..config.chains).map(run).collect()
    };
    Ok(PosteriorDraws { names: target.output_names(), chains: chains?, parallel: config.parallel })
}
