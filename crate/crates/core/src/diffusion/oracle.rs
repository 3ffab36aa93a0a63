//! Independent numerical checks of the closed-form formulas.

use alloc::vec;
use alloc::vec::Vec;

use super::{forward_closed, forward_step};
use crate::schedule::{BMapStack, ScheduleTable};
use crate::{Error, ImageGrid, Result, RngStream};

/// Quadrature nodes used by [`posterior_bayes_oracle`].
pub const ORACLE_NODES: usize = 20_001;
pub const ORACLE_HALF_WIDTH: f64 = 8.0;

/// Posterior mean and variance of `x_{t-1}` by brute-force quadrature of
/// `q(x_t | x_{t-1}) q(x_{t-1} | x_0)` over `[-8, 8]`.
///
/// Only the two forward densities are used; nothing here shares code with
/// [`super::posterior_moments`].
pub fn posterior_bayes_oracle(x_t: f64, x0: f64, a_step: f64, a_prev_bar: f64) -> (f64, f64) {
    let step_var = 1.0 - a_step;
    let prev_var = 1.0 - a_prev_bar;
    let step_scale = libm::sqrt(a_step);
    let prev_mean = libm::sqrt(a_prev_bar) * x0;
    let h = 2.0 * ORACLE_HALF_WIDTH / (ORACLE_NODES - 1) as f64;

    let log_density = |x: f64| {
        let r1 = x_t - step_scale * x;
        let r2 = x - prev_mean;
        -0.5 * (r1 * r1 / step_var + r2 * r2 / prev_var)
    };
    let nodes = (0..ORACLE_NODES).map(|i| -ORACLE_HALF_WIDTH + i as f64 * h);
    let peak = nodes
        .clone()
        .map(log_density)
        .fold(f64::NEG_INFINITY, f64::max);

    // trapezoid rule; the end weights are negligible but kept for form
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (i, x) in nodes.enumerate() {
        let wgt = if i == 0 || i == ORACLE_NODES - 1 {
            0.5
        } else {
            1.0
        };
        let p = wgt * libm::exp(log_density(x) - peak);
        z += p;
        m1 += p * x;
        m2 += p * x * x;
    }
    let mean = m1 / z;
    (mean, m2 / z - mean * mean)
}

/// Worst per-pixel disagreement between chained forward steps and the
/// closed-form marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub samples: usize,
    pub max_mean_gap: f64,
    pub max_var_gap: f64,
    /// Largest mean gap in units of its standard error.
    pub max_mean_z: f64,
    /// Largest variance gap in units of its standard error.
    pub max_var_z: f64,
}

impl GapReport {
    pub fn within(&self, standard_errors: f64) -> bool {
        self.max_mean_z <= standard_errors && self.max_var_z <= standard_errors
    }
}

#[derive(Clone)]
struct PixelMoments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    m3: Vec<f64>,
    m4: Vec<f64>,
}

impl PixelMoments {
    fn new(len: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
            m3: vec![0.0; len],
            m4: vec![0.0; len],
        }
    }

    // one-pass central moments up to order four
    fn push(&mut self, x: &ImageGrid) {
        let n1 = self.n;
        self.n += 1.0;
        let n = self.n;
        for (i, &v) in x.data().iter().enumerate() {
            let delta = v - self.mean[i];
            let dn = delta / n;
            let dn2 = dn * dn;
            let term1 = delta * dn * n1;
            self.mean[i] += dn;
            self.m4[i] += term1 * dn2 * (n * n - 3.0 * n + 3.0) + 6.0 * dn2 * self.m2[i]
                - 4.0 * dn * self.m3[i];
            self.m3[i] += term1 * dn * (n - 2.0) - 3.0 * dn * self.m2[i];
            self.m2[i] += term1;
        }
    }

    fn variance(&self, i: usize) -> f64 {
        self.m2[i] / (self.n - 1.0)
    }

    fn mean_se2(&self, i: usize) -> f64 {
        self.variance(i) / self.n
    }

    fn var_se2(&self, i: usize) -> f64 {
        let mu2 = self.m2[i] / self.n;
        let mu4 = self.m4[i] / self.n;
        (mu4 - mu2 * mu2).max(0.0) / self.n
    }
}

/// Runs `t` chained [`forward_step`]s and one [`forward_closed`] per sample,
/// `n_samples` times each, and compares per-pixel means and variances.
pub fn iterated_equals_closed_check(
    x0: &ImageGrid,
    t: usize,
    sched: &ScheduleTable,
    stack: &BMapStack,
    n_samples: usize,
    rng: &RngStream,
) -> Result<GapReport> {
    if n_samples < 2 {
        return Err(Error::Empty(alloc::format!(
            "Monte-Carlo check needs at least 2 samples, got {n_samples}"
        )));
    }
    stack.check_compatible(sched, t)?;
    let mut chain_rng = rng.substream(0);
    let mut closed_rng = rng.substream(1);
    let mut chained = PixelMoments::new(x0.len());
    let mut closed = PixelMoments::new(x0.len());
    for _ in 0..n_samples {
        let mut x = x0.clone();
        for s in 1..=t {
            x = forward_step(&x, s, sched, stack, &mut chain_rng)?;
        }
        chained.push(&x);
        closed.push(&forward_closed(x0, t, sched, stack, &mut closed_rng)?.x_t);
    }

    let mut report = GapReport {
        samples: n_samples,
        max_mean_gap: 0.0,
        max_var_gap: 0.0,
        max_mean_z: 0.0,
        max_var_z: 0.0,
    };
    for i in 0..x0.len() {
        let mean_gap = (chained.mean[i] - closed.mean[i]).abs();
        let var_gap = (chained.variance(i) - closed.variance(i)).abs();
        let mean_se = libm::sqrt(chained.mean_se2(i) + closed.mean_se2(i));
        let var_se = libm::sqrt(chained.var_se2(i) + closed.var_se2(i));
        report.max_mean_gap = report.max_mean_gap.max(mean_gap);
        report.max_var_gap = report.max_var_gap.max(var_gap);
        report.max_mean_z = report.max_mean_z.max(mean_gap / mean_se);
        report.max_var_z = report.max_var_z.max(var_gap / var_se);
    }
    Ok(report)
}
