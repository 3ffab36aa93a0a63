//! Forward noising, the B-map posterior, and ancestral sampling.
//!
//! With per-pixel step coefficient `a_t = alpha_t * B_t` and signal coefficient
//! `abar_t = alpha_bar_t * Bbar_t`, the forward kernel is
//!
//! ```text
//! x_t = sqrt(a_t) * x_{t-1} + sqrt(1 - a_t) * eps
//! x_t | x_0 ~ N(sqrt(abar_t) * x_0, 1 - abar_t)
//! ```
//!
//! and the Gaussian posterior `q(x_{t-1} | x_t, x_0)` has
//!
//! ```text
//! mu     = [sqrt(a_t)(1 - abar_{t-1}) x_t + sqrt(abar_{t-1})(1 - a_t) x_0] / (1 - abar_t)
//! sigma2 = (1 - a_t)(1 - abar_{t-1}) / (1 - abar_t)
//! ```
//!
//! All products are point-wise. With `B == 1` these are the textbook DDPM
//! formulas; [`reference`] keeps an independent implementation of those.

pub mod oracle;
pub mod reference;

use crate::error::param_err;
use crate::schedule::{BMapStack, ScheduleTable};
use crate::{gaussian_field, Error, ImageGrid, Result, RngStream};

pub use oracle::{iterated_equals_closed_check, posterior_bayes_oracle, GapReport};

/// Denominator guard for the posterior.
pub const POSTERIOR_GUARD: f64 = 1e-12;
/// Pixels whose signal coefficient is at or below this get the prior mean as
/// their clean-image estimate.
pub const SIGNAL_FLOOR: f64 = 1e-12;

/// Anything that predicts the noise field from `(x_t, t)`.
pub trait EpsPredictor {
    fn predict_eps(&self, x_t: &ImageGrid, t: usize) -> Result<ImageGrid>;
}

impl<F> EpsPredictor for F
where
    F: Fn(&ImageGrid, usize) -> Result<ImageGrid>,
{
    fn predict_eps(&self, x_t: &ImageGrid, t: usize) -> Result<ImageGrid> {
        self(x_t, t)
    }
}

/// A draw from the closed-form marginal together with the noise that made it.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSample {
    pub x_t: ImageGrid,
    pub eps: ImageGrid,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorParams {
    pub mu: ImageGrid,
    /// Diagonal variance, one entry per pixel.
    pub sigma2: ImageGrid,
}

fn check_shape(x: &ImageGrid, stack: &BMapStack) -> Result<()> {
    let (h, w) = stack.shape();
    x.ensure_shape(h, w)
}

/// Scalar forward kernel `sqrt(a) x + sqrt(1 - a) eps`.
#[inline]
pub fn forward_kernel(x_prev: f64, a_step: f64, eps: f64) -> f64 {
    libm::sqrt(a_step) * x_prev + libm::sqrt(1.0 - a_step) * eps
}

/// One forward step with caller-supplied noise.
pub fn forward_step_with_noise(
    x_prev: &ImageGrid,
    t: usize,
    sched: &ScheduleTable,
    stack: &BMapStack,
    eps: &ImageGrid,
) -> Result<ImageGrid> {
    stack.check_compatible(sched, t)?;
    check_shape(x_prev, stack)?;
    check_shape(eps, stack)?;
    let alpha = sched.alpha(t);
    let b = stack.bmap(t).data();
    let data = x_prev
        .data()
        .iter()
        .zip(eps.data())
        .zip(b)
        .map(|((&x, &e), &bt)| forward_kernel(x, alpha * bt, e))
        .collect();
    ImageGrid::new(x_prev.height(), x_prev.width(), data)
}

/// One ancestral forward step `x_{t-1} -> x_t` using the per-step `alpha_t * B_t`.
pub fn forward_step(
    x_prev: &ImageGrid,
    t: usize,
    sched: &ScheduleTable,
    stack: &BMapStack,
    rng: &mut RngStream,
) -> Result<ImageGrid> {
    let eps = gaussian_field(rng, x_prev.height(), x_prev.width())?;
    forward_step_with_noise(x_prev, t, sched, stack, &eps)
}

/// Closed-form marginal sample with caller-supplied noise.
pub fn forward_closed_with_noise(
    x0: &ImageGrid,
    t: usize,
    sched: &ScheduleTable,
    stack: &BMapStack,
    eps: ImageGrid,
) -> Result<ForwardSample> {
    stack.check_compatible(sched, t)?;
    check_shape(x0, stack)?;
    check_shape(&eps, stack)?;
    if let Some(v) = x0.data().iter().find(|v| v.is_nan() || v.abs() > 1.0) {
        return Err(param_err!("x0 value {v} outside [-1, 1]"));
    }
    let sig = stack.signal_coeff(t).data();
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .zip(sig)
        .map(|((&x, &e), &a)| forward_kernel(x, a, e))
        .collect();
    Ok(ForwardSample {
        x_t: ImageGrid::new(x0.height(), x0.width(), data)?,
        eps,
        t,
    })
}

/// Single-shot draw of `x_t ~ q(x_t | x_0)`.
pub fn forward_closed(
    x0: &ImageGrid,
    t: usize,
    sched: &ScheduleTable,
    stack: &BMapStack,
    rng: &mut RngStream,
) -> Result<ForwardSample> {
    let eps = gaussian_field(rng, x0.height(), x0.width())?;
    forward_closed_with_noise(x0, t, sched, stack, eps)
}

/// Scalar posterior moments for step coefficient `a_step = alpha_t B_t` and
/// previous signal coefficient `a_prev_bar = alpha_bar_{t-1} Bbar_{t-1}`.
pub fn posterior_moments(x_t: f64, x0: f64, a_step: f64, a_prev_bar: f64) -> Result<(f64, f64)> {
    let denom = 1.0 - a_step * a_prev_bar;
    if denom < POSTERIOR_GUARD {
        return Err(Error::NumericDegenerate(alloc::format!(
            "1 - abar_t = {denom} below guard"
        )));
    }
    let mu = (libm::sqrt(a_step) * (1.0 - a_prev_bar) * x_t
        + libm::sqrt(a_prev_bar) * (1.0 - a_step) * x0)
        / denom;
    let sigma2 = (1.0 - a_step) * (1.0 - a_prev_bar) / denom;
    Ok((mu, sigma2))
}

/// Posterior `q(x_{t-1} | x_t, x0_hat)` for `2 <= t <= T`.
pub fn posterior_params(
    x_t: &ImageGrid,
    x0_hat: &ImageGrid,
    t: usize,
    sched: &ScheduleTable,
    stack: &BMapStack,
) -> Result<PosteriorParams> {
    stack.check_compatible(sched, t)?;
    if t < 2 {
        return Err(Error::Index {
            index: t,
            len: sched.steps(),
        });
    }
    check_shape(x_t, stack)?;
    check_shape(x0_hat, stack)?;
    let alpha = sched.alpha(t);
    let b = stack.bmap(t).data();
    let prev = stack.signal_coeff(t - 1).data();
    let n = x_t.len();
    let mut mu = alloc::vec::Vec::with_capacity(n);
    let mut sigma2 = alloc::vec::Vec::with_capacity(n);
    for i in 0..n {
        let (m, s) = posterior_moments(x_t.data()[i], x0_hat.data()[i], alpha * b[i], prev[i])?;
        mu.push(m);
        sigma2.push(s);
    }
    let (h, w) = x_t.shape();
    Ok(PosteriorParams {
        mu: ImageGrid::new(h, w, mu)?,
        sigma2: ImageGrid::new(h, w, sigma2)?,
    })
}

/// Inverts the closed-form marginal without clamping. Pixels at or below
/// [`SIGNAL_FLOOR`] return 0.
pub fn predict_x0_unclamped(
    x_t: &ImageGrid,
    eps_hat: &ImageGrid,
    t: usize,
    sched: &ScheduleTable,
    stack: &BMapStack,
) -> Result<ImageGrid> {
    stack.check_compatible(sched, t)?;
    check_shape(x_t, stack)?;
    check_shape(eps_hat, stack)?;
    let sig = stack.signal_coeff(t).data();
    let data = x_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .zip(sig)
        .map(|((&x, &e), &a)| {
            if a <= SIGNAL_FLOOR {
                0.0
            } else {
                (x - libm::sqrt(1.0 - a) * e) / libm::sqrt(a)
            }
        })
        .collect();
    ImageGrid::new(x_t.height(), x_t.width(), data)
}

/// Clean-image estimate from predicted noise, clamped to `[-1, 1]`.
pub fn predict_x0_from_eps(
    x_t: &ImageGrid,
    eps_hat: &ImageGrid,
    t: usize,
    sched: &ScheduleTable,
    stack: &BMapStack,
) -> Result<ImageGrid> {
    Ok(predict_x0_unclamped(x_t, eps_hat, t, sched, stack)?.clamp(-1.0, 1.0))
}

/// Ancestral sampling from `x_T ~ N(0, I)` down to `x_0`.
///
/// Noise for `x_T` comes from `rng.substream(0)` and noise for the step into
/// `x_{t-1}` from `rng.substream(t)`. The last step returns the posterior mean,
/// which at `t = 1` equals the clamped clean-image estimate.
pub fn ancestral_sample<D: EpsPredictor + ?Sized>(
    denoiser: &D,
    sched: &ScheduleTable,
    stack: &BMapStack,
    rng: &RngStream,
    shape: (usize, usize),
) -> Result<ImageGrid> {
    ancestral_sample_observed(denoiser, sched, stack, rng, shape, |_, _| {})
}

/// [`ancestral_sample`] that reports every intermediate `x_{t-1}` as
/// `observer(t - 1, x)`, ending with `observer(0, x_0)`.
pub fn ancestral_sample_observed<D: EpsPredictor + ?Sized>(
    denoiser: &D,
    sched: &ScheduleTable,
    stack: &BMapStack,
    rng: &RngStream,
    shape: (usize, usize),
    mut observer: impl FnMut(usize, &ImageGrid),
) -> Result<ImageGrid> {
    let steps = sched.steps();
    stack.check_compatible(sched, steps)?;
    let (h, w) = shape;
    if stack.shape() != shape {
        return Err(crate::error::dim_err!(
            "sample shape {h}x{w} does not match B-map shape {:?}",
            stack.shape()
        ));
    }
    let mut x = gaussian_field(&mut rng.substream(0), h, w)?;
    for t in (1..=steps).rev() {
        let eps_hat = denoiser.predict_eps(&x, t)?;
        let x0_hat = predict_x0_from_eps(&x, &eps_hat, t, sched, stack)?;
        if t == 1 {
            x = x0_hat;
        } else {
            let post = posterior_params(&x, &x0_hat, t, sched, stack)?;
            let z = gaussian_field(&mut rng.substream(t as u64), h, w)?;
            let data = post
                .mu
                .data()
                .iter()
                .zip(post.sigma2.data())
                .zip(z.data())
                .map(|((&m, &s2), &e)| m + libm::sqrt(s2) * e)
                .collect();
            x = ImageGrid::new(h, w, data)?;
        }
        observer(t - 1, &x);
    }
    Ok(x.clamp(-1.0, 1.0))
}

/// Training triple `(t, x_t, eps)` with `t` uniform on `1..=T`.
pub fn training_pair(
    x0: &ImageGrid,
    sched: &ScheduleTable,
    stack: &BMapStack,
    rng: &mut RngStream,
) -> Result<(usize, ImageGrid, ImageGrid)> {
    let t = 1 + rng.below(sched.steps() as u64) as usize;
    let sample = forward_closed(x0, t, sched, stack, rng)?;
    Ok((t, sample.x_t, sample.eps))
}

/// Per-pixel `KL(q(x_t | x_0) || N(0, 1))`.
pub fn marginal_kl_to_prior(x0: &ImageGrid, t: usize, stack: &BMapStack) -> Result<ImageGrid> {
    check_shape(x0, stack)?;
    if t == 0 || t > stack.steps() {
        return Err(Error::Index {
            index: t,
            len: stack.steps(),
        });
    }
    x0.zip_map(stack.signal_coeff(t), |x, a| {
        0.5 * (a * (x * x - 1.0) - libm::log1p(-a))
    })
}
