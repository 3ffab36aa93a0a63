//! Executable self-checks of the diffusion math: each check compares an
//! implementation against an independent oracle and reports the observed gap
//! next to its tolerance.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::{format, vec};

use crate::denoiser::{denoiser_init, gradient_check, randomize, TrainingExample};
use crate::diffusion::{
    self, forward_closed_with_noise, iterated_equals_closed_check, marginal_kl_to_prior,
    posterior_bayes_oracle, posterior_moments, posterior_params, reference,
};
use crate::schedule::{alpha_schedule, build_bmap_stack, AlphaKind, BMapSpec};
use crate::{gaussian_field, ImageGrid, Result, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub seed: u64,
    pub posterior_draws: usize,
    pub iterated_samples: usize,
    pub iterated_steps: usize,
    pub iterated_side: usize,
    pub iterated_eps_b: f64,
    pub reduction_steps: usize,
    pub reduction_eps_b: f64,
    pub kl_steps: usize,
    pub kl_eps_b: f64,
    pub kl_height: usize,
    /// Negative control: evaluate the posterior mean with the `(1 - abar_{t-1})`
    /// factor moved inside the square root. The posterior check must fail.
    pub corrupt_posterior_mean: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            posterior_draws: 100,
            iterated_samples: 100_000,
            iterated_steps: 16,
            iterated_side: 8,
            iterated_eps_b: 0.3,
            reduction_steps: 50,
            reduction_eps_b: 1e-12,
            kl_steps: 200,
            kl_eps_b: 0.04,
            kl_height: 32,
            corrupt_posterior_mean: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub tolerance: f64,
    pub observed: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const POSTERIOR_TOL: f64 = 1e-3;
pub const ITERATED_TOL_SE: f64 = 3.0;
pub const REDUCTION_TOL: f64 = 1e-8;
pub const GRADIENT_TOL: f64 = 1e-4;

pub fn run_all(config: &VerifyConfig) -> Result<VerifyReport> {
    let root = RngStream::new(config.seed, &[]);
    let checks = vec![
        check_posterior(config, root.substream(0)),
        check_iterated(config, &root.substream(1))?,
        check_reduction(config, &root.substream(2))?,
        check_kl_depth(config)?,
        check_gradients(&root.substream(4))?,
    ];
    Ok(VerifyReport { checks })
}

/// Posterior mean with `(1 - a_prev_bar)` inside the root on the `x_t` term.
fn posterior_moments_misplaced_root(x_t: f64, x0: f64, a_step: f64, a_prev_bar: f64) -> (f64, f64) {
    let denom = 1.0 - a_step * a_prev_bar;
    let mu = (libm::sqrt(a_step * (1.0 - a_prev_bar)) * x_t
        + libm::sqrt(a_prev_bar) * (1.0 - a_step) * x0)
        / denom;
    (mu, (1.0 - a_step) * (1.0 - a_prev_bar) / denom)
}

pub fn check_posterior(config: &VerifyConfig, mut rng: RngStream) -> CheckResult {
    let mut worst_mu: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for _ in 0..config.posterior_draws {
        let a_step = 0.01 + 0.989 * rng.uniform_open0();
        let a_prev = 0.01 + 0.989 * rng.uniform_open0();
        let x_t = 4.0 * rng.uniform() - 2.0;
        let x0 = 4.0 * rng.uniform() - 2.0;
        let (mu, var) = if config.corrupt_posterior_mean {
            posterior_moments_misplaced_root(x_t, x0, a_step, a_prev)
        } else {
            // the open interval keeps 1 - a_step * a_prev well above the guard
            posterior_moments(x_t, x0, a_step, a_prev).expect("denominator above guard")
        };
        let (mu_ref, var_ref) = posterior_bayes_oracle(x_t, x0, a_step, a_prev);
        worst_mu = worst_mu.max((mu - mu_ref).abs());
        worst_var = worst_var.max((var - var_ref).abs());
    }
    let observed = worst_mu.max(worst_var);
    CheckResult {
        name: "posterior_oracle",
        tolerance: POSTERIOR_TOL,
        observed,
        passed: observed < POSTERIOR_TOL,
        detail: format!(
            "{} draws, max |dmu| {worst_mu:e}, max |dsigma2| {worst_var:e}",
            config.posterior_draws
        ),
    }
}

/// Clean image with values in {-1, -0.5, 0, 0.5, 1}.
fn level_image(h: usize, w: usize) -> Result<ImageGrid> {
    ImageGrid::from_fn(h, w, |r, c| ((r * w + c) % 5) as f64 * 0.5 - 1.0)
}

pub fn check_iterated(config: &VerifyConfig, rng: &RngStream) -> Result<CheckResult> {
    let side = config.iterated_side;
    let sched = alpha_schedule(AlphaKind::Cosine, config.iterated_steps)?;
    let stack = build_bmap_stack(&sched, &BMapSpec::new(side, side, config.iterated_eps_b))?;
    let x0 = level_image(side, side)?;
    let report = iterated_equals_closed_check(
        &x0,
        sched.steps(),
        &sched,
        &stack,
        config.iterated_samples,
        rng,
    )?;
    let observed = report.max_mean_z.max(report.max_var_z);
    Ok(CheckResult {
        name: "iterated_equals_closed",
        tolerance: ITERATED_TOL_SE,
        observed,
        passed: report.within(ITERATED_TOL_SE),
        detail: format!(
            "{side}x{side}, T={}, eps_b={}, {} samples, max mean gap {:e} ({:.3} SE), max var gap {:e} ({:.3} SE)",
            sched.steps(),
            config.iterated_eps_b,
            report.samples,
            report.max_mean_gap,
            report.max_mean_z,
            report.max_var_gap,
            report.max_var_z
        ),
    })
}

fn max_abs_gap(a: &ImageGrid, b: &ImageGrid) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn check_reduction(config: &VerifyConfig, rng: &RngStream) -> Result<CheckResult> {
    let (h, w) = (8, 8);
    let sched = alpha_schedule(AlphaKind::Cosine, config.reduction_steps)?;
    let stack = build_bmap_stack(&sched, &BMapSpec::new(h, w, config.reduction_eps_b))?;
    let x0 = level_image(h, w)?;
    let mut marginal: f64 = 0.0;
    let mut posterior: f64 = 0.0;
    for t in 1..=sched.steps() {
        let eps = gaussian_field(&mut rng.substream(t as u64), h, w)?;
        let ours = forward_closed_with_noise(&x0, t, &sched, &stack, eps.clone())?.x_t;
        let theirs = reference::forward_closed_with_noise(&x0, t, &sched, &eps)?;
        marginal = marginal.max(max_abs_gap(&ours, &theirs));
        if t >= 2 {
            let post = posterior_params(&ours, &x0, t, &sched, &stack)?;
            let (mu, var) = reference::posterior(&ours, &x0, t, &sched)?;
            posterior = posterior.max(max_abs_gap(&post.mu, &mu));
            posterior = posterior.max(
                post.sigma2
                    .data()
                    .iter()
                    .fold(0.0, |m, s| m.max((s - var).abs())),
            );
        }
    }
    // a fixed, non-trivial noise predictor shared by both samplers
    let predictor = |x: &ImageGrid, t: usize| -> Result<ImageGrid> {
        let phase = t as f64 / 7.0;
        Ok(x.map(|v| 0.5 * libm::sin(v + phase)))
    };
    let mut sample: f64 = 0.0;
    for k in 0..4 {
        let stream = rng.substream(1000 + k);
        let ours = diffusion::ancestral_sample(&predictor, &sched, &stack, &stream, (h, w))?;
        let theirs = reference::ancestral_sample(&predictor, &sched, &stream, (h, w))?;
        sample = sample.max(max_abs_gap(&ours, &theirs));
    }
    let observed = marginal.max(posterior).max(sample);
    Ok(CheckResult {
        name: "ddpm_reduction",
        tolerance: REDUCTION_TOL,
        observed,
        passed: observed < REDUCTION_TOL,
        detail: format!(
            "eps_b={:e}, T={}: marginal {marginal:e}, posterior {posterior:e}, samples {sample:e}",
            config.reduction_eps_b,
            sched.steps()
        ),
    })
}

/// Timesteps at which depth ordering of the KL is checked.
pub fn kl_check_steps(steps: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = [0.05, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|f| (libm::round(f * steps as f64) as usize).max(1))
        .collect();
    ts.dedup();
    ts
}

pub fn check_kl_depth(config: &VerifyConfig) -> Result<CheckResult> {
    let (h, w) = (config.kl_height, 5);
    let sched = alpha_schedule(AlphaKind::Cosine, config.kl_steps)?;
    let stack = build_bmap_stack(&sched, &BMapSpec::new(h, w, config.kl_eps_b))?;
    // one clean level per column so depth is the only thing that varies
    let x0 = ImageGrid::from_fn(h, w, |_, c| c as f64 * 0.5 - 1.0)?;
    let mut worst_rise = f64::NEG_INFINITY;
    let mut missing_strict = Vec::new();
    let steps = kl_check_steps(sched.steps());
    for &t in &steps {
        let kl = marginal_kl_to_prior(&x0, t, &stack)?;
        let mut strict = true;
        for c in 0..w {
            let mut dropped = false;
            for r in 1..h {
                let rise = kl.get(r, c) - kl.get(r - 1, c);
                worst_rise = worst_rise.max(rise);
                dropped |= rise < 0.0;
            }
            strict &= dropped;
        }
        if 4 * t >= sched.steps() && !strict {
            missing_strict.push(t);
        }
    }
    Ok(CheckResult {
        name: "kl_depth_order",
        tolerance: 0.0,
        observed: worst_rise,
        passed: worst_rise <= 0.0 && missing_strict.is_empty(),
        detail: format!(
            "T={}, eps_b={}, H={h}, t in {steps:?}: largest row-to-row KL rise {worst_rise:e}; steps without strict decrease {missing_strict:?}",
            sched.steps(),
            config.kl_eps_b
        ),
    })
}

pub fn check_gradients(rng: &RngStream) -> Result<CheckResult> {
    let (h, w, hidden, steps) = (8, 8, 4, 3);
    let mut params = denoiser_init(h, w, hidden, steps, rng.seed())?;
    randomize(&mut params, 0.3, &mut rng.substream(0));
    let batch = (1..=2)
        .map(|t| {
            let mut r = rng.substream(t as u64);
            Ok(TrainingExample {
                t,
                x_t: gaussian_field(&mut r, h, w)?,
                target_eps: gaussian_field(&mut r, h, w)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = gradient_check(&params, &batch, 1e-5)?;
    Ok(CheckResult {
        name: "gradient_check",
        tolerance: GRADIENT_TOL,
        observed: report.max_rel_error,
        passed: report.max_rel_error < GRADIENT_TOL,
        detail: format!(
            "{} parameters, h=1e-5, max relative error {:e}, max absolute error {:e}",
            report.parameters, report.max_rel_error, report.max_abs_error
        ),
    })
}
