//! Warmup adaptation: dual averaging of the step size and windowed estimates
//! of the diagonal metric.

use rand::Rng;

use crate::error::{Error, Result};
use crate::sampler::nuts::{Nuts, State};
use crate::sampler::LogDensity;

/// Nesterov dual averaging on `log(step_size)`.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    pub target: f64,
    pub gamma: f64,
    pub t0: f64,
    pub kappa: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl DualAveraging {
    pub fn new(target: f64, step_size: f64) -> Self {
        Self {
            target,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
            mu: (10.0 * step_size).ln(),
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        }
    }

    pub fn restart(&mut self, step_size: f64) {
        self.mu = (10.0 * step_size).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Update with the latest acceptance statistic; returns the new step size.
    pub fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let a = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - a);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// Step size to freeze after warmup.
    pub fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone)]
pub struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn variance(&self) -> Vec<f64> {
        let d = (self.n as f64 - 1.0).max(1.0);
        self.m2.iter().map(|s| s / d).collect()
    }

    pub fn reset(&mut self) {
        self.n = 0;
        self.mean.iter_mut().for_each(|x| *x = 0.0);
        self.m2.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Warmup schedule: a fast initial buffer, doubling slow windows for the
/// metric, and a terminal buffer for the final step size.
#[derive(Debug, Clone)]
pub struct WindowSchedule {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
}

pub const MIN_WARMUP: usize = 150;

impl WindowSchedule {
    pub fn new(num_warmup: usize) -> Result<Self> {
        if num_warmup < MIN_WARMUP {
            return Err(Error::Config(format!(
                "warmup must be at least {MIN_WARMUP} iterations, got {num_warmup}"
            )));
        }
        let (init_buffer, term_buffer, base_window) = (75, 50, 25);
        Ok(Self {
            num_warmup,
            init_buffer,
            term_buffer,
            window_size: base_window,
            next_window: init_buffer + base_window - 1,
            counter: 0,
        })
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.num_warmup - self.term_buffer
            && self.counter != self.num_warmup
    }

    fn window_end(&self) -> bool {
        self.counter == self.next_window && self.counter != self.num_warmup
    }

    fn advance_window(&mut self) {
        let last = self.num_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.num_warmup - self.term_buffer {
            self.next_window = last;
        }
    }
}

/// Diagonal-metric estimator driven by a [`WindowSchedule`].
#[derive(Debug, Clone)]
pub struct MetricAdaptation {
    schedule: WindowSchedule,
    estimator: Welford,
}

impl MetricAdaptation {
    pub fn new(dim: usize, num_warmup: usize) -> Result<Self> {
        Ok(Self {
            schedule: WindowSchedule::new(num_warmup)?,
            estimator: Welford::new(dim),
        })
    }

    /// Record a warmup draw. Returns a regularized variance estimate when a
    /// slow window closes.
    pub fn learn(&mut self, q: &[f64]) -> Option<Vec<f64>> {
        if self.schedule.in_window() {
            self.estimator.add(q);
        }
        if self.schedule.window_end() {
            self.schedule.advance_window();
            let n = self.estimator.count() as f64;
            let var = self
                .estimator
                .variance()
                .into_iter()
                .map(|v| (n / (n + 5.0)) * v + 1e-3 * (5.0 / (n + 5.0)))
                .collect();
            self.estimator.reset();
            self.schedule.counter += 1;
            return Some(var);
        }
        self.schedule.counter += 1;
        None
    }
}

/// Double or halve the step size until a single leapfrog step crosses an
/// acceptance probability of 0.8.
pub fn find_reasonable_step_size<M: LogDensity + ?Sized, R: Rng + ?Sized>(
    nuts: &mut Nuts,
    model: &M,
    start: &State,
    rng: &mut R,
) -> Result<()> {
    let target = 0.8f64.ln();
    let delta_h = |nuts: &Nuts, rng: &mut R| {
        let mut z = start.clone();
        nuts.sample_momentum(&mut z, rng);
        let h0 = nuts.hamiltonian(&z);
        let h = if nuts.leapfrog(model, &mut z, nuts.step_size) {
            nuts.hamiltonian(&z)
        } else {
            f64::INFINITY
        };
        let h = if h.is_nan() { f64::INFINITY } else { h };
        h0 - h
    };
    let direction = if delta_h(nuts, rng) > target { 1 } else { -1 };
    loop {
        let dh = delta_h(nuts, rng);
        if direction == 1 && !(dh > target) {
            break;
        }
        if direction == -1 && !(dh < target) {
            break;
        }
        nuts.step_size = if direction == 1 {
            2.0 * nuts.step_size
        } else {
            0.5 * nuts.step_size
        };
        if nuts.step_size > 1e7 {
            return Err(Error::Sampler(
                "step size diverged during initialization; the posterior may be improper".into(),
            ));
        }
        if nuts.step_size < 1e-12 {
            return Err(Error::Sampler(format!(
                "step size collapsed below 1e-12 ({:e}) during initialization; \
                 consider rescaling or reparameterizing the model",
                nuts.step_size
            )));
        }
    }
    Ok(())
}
