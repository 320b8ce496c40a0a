//! No-U-Turn sampler with multinomial trajectory sampling, the generalized
//! U-turn criterion (including the checks across merged subtrees), a diagonal
//! metric, dual-averaging step-size adaptation and windowed metric
//! adaptation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::posterior::LogDensity;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NutsConfig {
    pub max_depth: usize,
    pub target_accept: f64,
    /// Energy error beyond which a trajectory is marked divergent.
    pub max_delta_h: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
    pub init_buffer: usize,
    pub term_buffer: usize,
    pub base_window: usize,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            max_depth: 10,
            target_accept: 0.8,
            max_delta_h: 1000.0,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            init_buffer: 75,
            term_buffer: 50,
            base_window: 25,
        }
    }
}

#[derive(Debug, Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

/// Per-transition summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub accept_stat: f64,
    pub divergent: bool,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub energy: f64,
    pub step_size: f64,
}

struct Sampler<'a, T: LogDensity + ?Sized> {
    target: &'a T,
    inv_metric: Vec<f64>,
    eps: f64,
    config: NutsConfig,
    n_leapfrog: usize,
    sum_metro: f64,
    divergent: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl<T: LogDensity + ?Sized> Sampler<'_, T> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_metric).map(|(x, m)| x * x * m).sum::<f64>()
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        -z.logp + self.kinetic(&z.p)
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(x, m)| x * m).collect()
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        z.logp = self.target.log_density_grad(&z.q, &mut z.grad);
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }

    fn sample_momentum<R: Rng + ?Sized>(&self, rng: &mut R, p: &mut [f64]) {
        for (x, m) in p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *x = n / m.sqrt();
        }
    }

    /// Stan's step-size search: double or halve until one leapfrog step
    /// crosses an acceptance probability of 0.8.
    fn init_stepsize<R: Rng + ?Sized>(&mut self, z0: &Point, rng: &mut R) {
        let mut z = z0.clone();
        self.sample_momentum(rng, &mut z.p);
        let h0 = self.hamiltonian(&z);
        let start = z.clone();
        self.leapfrog(&mut z, self.eps);
        let h = self.hamiltonian(&z);
        let h = if h.is_nan() { f64::INFINITY } else { h };
        let direction = if h0 - h > 0.8f64.ln() { 1 } else { -1 };
        for _ in 0..100 {
            let mut z = start.clone();
            self.sample_momentum(rng, &mut z.p);
            let h0 = self.hamiltonian(&z);
            self.leapfrog(&mut z, self.eps);
            let h = self.hamiltonian(&z);
            let h = if h.is_nan() { f64::INFINITY } else { h };
            let delta = h0 - h;
            if direction == 1 && !(delta > 0.8f64.ln()) {
                break;
            } else if direction == -1 && !(delta < 0.8f64.ln()) {
                break;
            }
            self.eps = if direction == 1 { 2.0 * self.eps } else { 0.5 * self.eps };
            if self.eps > 1e7 || self.eps < 1e-12 {
                break;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree<R: Rng + ?Sized>(
        &mut self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        h0: f64,
        sign: f64,
        log_sum_weight: &mut f64,
        rng: &mut R,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(z, sign * self.eps);
            self.n_leapfrog += 1;
            let mut h = self.hamiltonian(z);
            if h.is_nan() {
                h = f64::INFINITY;
            }
            if h - h0 > self.config.max_delta_h {
                self.divergent = true;
            }
            *log_sum_weight = log_add(*log_sum_weight, h0 - h);
            self.sum_metro += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            *p_sharp_beg = self.p_sharp(&z.p);
            p_sharp_end.clone_from(p_sharp_beg);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            p_beg.clone_from(&z.p);
            p_end.clone_from(p_beg);
            return !self.divergent;
        }
        let dim = z.q.len();
        // initial subtree
        let mut lsw_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; dim];
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        let valid_init = self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            sign,
            &mut lsw_init,
            rng,
        );
        if !valid_init {
            return false;
        }
        // final subtree
        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        let valid_final = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            sign,
            &mut lsw_final,
            rng,
        );
        if !valid_final {
            return false;
        }
        let lsw_subtree = log_add(lsw_init, lsw_final);
        *log_sum_weight = log_add(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            z_propose.clone_from(&z_propose_final);
        }
        let rho_subtree: Vec<f64> = rho_init.iter().zip(&rho_final).map(|(a, b)| a + b).collect();
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let criterion = |minus: &[f64], plus: &[f64], r: &[f64]| dot(plus, r) > 0.0 && dot(minus, r) > 0.0;
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        let rho_ext: Vec<f64> = rho_init.iter().zip(&p_final_beg).map(|(a, b)| a + b).collect();
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &rho_ext);
        let rho_ext: Vec<f64> = rho_final.iter().zip(&p_init_end).map(|(a, b)| a + b).collect();
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &rho_ext);
        persist
    }

    fn transition<R: Rng + ?Sized>(&mut self, current: &mut Point, rng: &mut R) -> Transition {
        let dim = current.q.len();
        self.sample_momentum(rng, &mut current.p);
        let mut z_fwd = current.clone();
        let mut z_bck = current.clone();
        let mut z_sample = current.clone();
        let mut z_propose = current.clone();

        let mut p_fwd_fwd = current.p.clone();
        let mut p_sharp_fwd_fwd = self.p_sharp(&current.p);
        let mut p_fwd_bck = current.p.clone();
        let mut p_sharp_fwd_bck = p_sharp_fwd_fwd.clone();
        let mut p_bck_fwd = current.p.clone();
        let mut p_sharp_bck_fwd = p_sharp_fwd_fwd.clone();
        let mut p_bck_bck = current.p.clone();
        let mut p_sharp_bck_bck = p_sharp_fwd_fwd.clone();

        let mut rho = current.p.clone();
        let mut log_sum_weight = 0.0;
        let h0 = self.hamiltonian(current);
        self.n_leapfrog = 0;
        self.sum_metro = 0.0;
        self.divergent = false;
        let mut depth = 0;

        while depth < self.config.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid;
            if rng.random::<f64>() > 0.5 {
                let mut z = z_fwd.clone();
                rho_bck.clone_from(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
                valid = self.build_tree(
                    depth,
                    &mut z,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    1.0,
                    &mut lsw_subtree,
                    rng,
                );
                z_fwd = z;
            } else {
                let mut z = z_bck.clone();
                rho_fwd.clone_from(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
                valid = self.build_tree(
                    depth,
                    &mut z,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -1.0,
                    &mut lsw_subtree,
                    rng,
                );
                z_bck = z;
            }
            if !valid {
                break;
            }
            depth += 1;
            if lsw_subtree > log_sum_weight || rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                z_sample.clone_from(&z_propose);
            }
            log_sum_weight = log_add(log_sum_weight, lsw_subtree);
            for i in 0..dim {
                rho[i] = rho_bck[i] + rho_fwd[i];
            }
            let criterion = |minus: &[f64], plus: &[f64], r: &[f64]| dot(plus, r) > 0.0 && dot(minus, r) > 0.0;
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let ext: Vec<f64> = rho_bck.iter().zip(&p_fwd_bck).map(|(a, b)| a + b).collect();
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &ext);
            let ext: Vec<f64> = rho_fwd.iter().zip(&p_bck_fwd).map(|(a, b)| a + b).collect();
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &ext);
            if !persist {
                break;
            }
        }
        let accept_stat = if self.n_leapfrog > 0 { self.sum_metro / self.n_leapfrog as f64 } else { 0.0 };
        *current = z_sample;
        Transition {
            accept_stat,
            divergent: self.divergent,
            depth,
            n_leapfrog: self.n_leapfrog,
            energy: self.hamiltonian(current),
            step_size: self.eps,
        }
    }
}

struct DualAveraging {
    mu: f64,
    s_bar: f64,
    x_bar: f64,
    counter: f64,
}

impl DualAveraging {
    fn new(eps: f64) -> Self {
        Self { mu: (10.0 * eps).ln(), s_bar: 0.0, x_bar: 0.0, counter: 0.0 }
    }

    fn learn(&mut self, eps: &mut f64, accept: f64, c: &NutsConfig) {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + c.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (c.target_accept - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / c.gamma;
        let x_eta = self.counter.powf(-c.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        *eps = x.exp();
    }
}

/// Window schedule for diagonal metric estimation during warmup.
struct Windows {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    enabled: bool,
}

impl Windows {
    fn new(warmup: usize, c: &NutsConfig) -> Self {
        let (mut init_buffer, mut term_buffer, mut base) = (c.init_buffer, c.term_buffer, c.base_window);
        let enabled = warmup >= 20;
        if enabled && init_buffer + base + term_buffer > warmup {
            // Stan's fallback proportions for short warmups
            init_buffer = (0.15 * warmup as f64) as usize;
            term_buffer = (0.1 * warmup as f64) as usize;
            base = warmup - (init_buffer + term_buffer);
        }
        Self {
            warmup,
            init_buffer,
            term_buffer,
            window_size: base,
            next_window: init_buffer + base - 1,
            counter: 0,
            enabled,
        }
    }

    fn in_window(&self) -> bool {
        self.enabled && self.counter >= self.init_buffer && self.counter < self.warmup - self.term_buffer && self.counter != self.warmup
    }

    fn end_of_window(&self) -> bool {
        self.enabled && self.counter == self.next_window && self.counter != self.warmup
    }

    fn compute_next(&mut self) {
        if self.next_window == self.warmup - self.term_buffer - 1 {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != self.warmup - self.term_buffer - 1 {
            let boundary = self.next_window + 2 * self.window_size;
            if boundary >= self.warmup - self.term_buffer {
                self.next_window = self.warmup - self.term_buffer - 1;
            }
        }
    }
}

/// Welford running variance.
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.n as f64;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    fn variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2.iter().map(|m| m / (n - 1.0)).collect()
    }
}

/// Output of one chain (unconstrained draws).
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub draws: Vec<Vec<f64>>,
    pub transitions: Vec<Transition>,
    pub warmup_transitions: Vec<Transition>,
    pub warmup_divergences: usize,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
}

/// Run warmup then `samples` transitions from `init`; returns `None` if the
/// initial point has non-finite density.
pub fn run_chain<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    init: &[f64],
    warmup: usize,
    samples: usize,
    config: NutsConfig,
    rng: &mut R,
) -> Option<ChainRun> {
    let dim = target.dim();
    let mut grad = vec![0.0; dim];
    let logp = target.log_density_grad(init, &mut grad);
    if !logp.is_finite() {
        return None;
    }
    let mut current = Point { q: init.to_vec(), p: vec![0.0; dim], grad, logp };
    let mut s = Sampler { target, inv_metric: vec![1.0; dim], eps: 1.0, config, n_leapfrog: 0, sum_metro: 0.0, divergent: false };
    s.init_stepsize(&current, rng);
    let mut da = DualAveraging::new(s.eps);
    let mut windows = Windows::new(warmup, &config);
    let mut welford = Welford::new(dim);
    let mut warmup_divergences = 0;
    let mut warmup_transitions = Vec::with_capacity(warmup);

    for _ in 0..warmup {
        let tr = s.transition(&mut current, rng);
        warmup_divergences += tr.divergent as usize;
        warmup_transitions.push(tr);
        da.learn(&mut s.eps, tr.accept_stat, &config);
        if windows.in_window() {
            welford.add(&current.q);
        }
        if windows.end_of_window() {
            windows.compute_next();
            let n = welford.n as f64;
            if welford.n >= 3 {
                s.inv_metric = welford.variance().iter().map(|v| (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0))).collect();
            }
            welford = Welford::new(dim);
            s.init_stepsize(&current, rng);
            da = DualAveraging::new(s.eps);
        }
        windows.counter += 1;
    }
    if warmup > 0 {
        s.eps = da.x_bar.exp();
    }
    let mut draws = Vec::with_capacity(samples);
    let mut transitions = Vec::with_capacity(samples);
    for _ in 0..samples {
        let tr = s.transition(&mut current, rng);
        draws.push(current.q.clone());
        transitions.push(tr);
    }
    Some(ChainRun { draws, transitions, warmup_transitions, warmup_divergences, step_size: s.eps, inv_metric: s.inv_metric })
}
