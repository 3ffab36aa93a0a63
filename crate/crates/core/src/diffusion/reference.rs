//! Plain DDPM with a scalar-per-timestep schedule.
//!
//! Written against the textbook beta parameterization and kept separate from
//! the B-map code so the `B == 1` reduction can be checked path against path.

use crate::schedule::ScheduleTable;
use crate::{gaussian_field, ImageGrid, Result, RngStream};

use super::EpsPredictor;

pub fn forward_closed_with_noise(
    x0: &ImageGrid,
    t: usize,
    sched: &ScheduleTable,
    eps: &ImageGrid,
) -> Result<ImageGrid> {
    sched.check_t(t)?;
    let ab = sched.alpha_bar(t);
    let (signal, noise) = (libm::sqrt(ab), libm::sqrt(1.0 - ab));
    x0.zip_map(eps, |x, e| signal * x + noise * e)
}

/// `(mu, sigma2)` of `q(x_{t-1} | x_t, x_0)`, `t >= 2`.
pub fn posterior(
    x_t: &ImageGrid,
    x0: &ImageGrid,
    t: usize,
    sched: &ScheduleTable,
) -> Result<(ImageGrid, f64)> {
    sched.check_t(t)?;
    let beta = sched.beta(t);
    let ab = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t - 1);
    let coef_x0 = libm::sqrt(ab_prev) * beta / (1.0 - ab);
    let coef_xt = libm::sqrt(sched.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
    let var = beta * (1.0 - ab_prev) / (1.0 - ab);
    Ok((x0.zip_map(x_t, |a, b| coef_x0 * a + coef_xt * b)?, var))
}

pub fn predict_x0(
    x_t: &ImageGrid,
    eps_hat: &ImageGrid,
    t: usize,
    sched: &ScheduleTable,
) -> Result<ImageGrid> {
    let ab = sched.alpha_bar(t);
    let (recip, noise) = (1.0 / libm::sqrt(ab), libm::sqrt(1.0 / ab - 1.0));
    Ok(x_t
        .zip_map(eps_hat, |x, e| recip * x - noise * e)?
        .clamp(-1.0, 1.0))
}

/// Same noise layout as [`super::ancestral_sample`]: `x_T` from substream 0,
/// step noise into `x_{t-1}` from substream `t`.
pub fn ancestral_sample<D: EpsPredictor + ?Sized>(
    denoiser: &D,
    sched: &ScheduleTable,
    rng: &RngStream,
    (h, w): (usize, usize),
) -> Result<ImageGrid> {
    let mut x = gaussian_field(&mut rng.substream(0), h, w)?;
    for t in (1..=sched.steps()).rev() {
        let eps_hat = denoiser.predict_eps(&x, t)?;
        let x0_hat = predict_x0(&x, &eps_hat, t, sched)?;
        if t == 1 {
            x = x0_hat;
        } else {
            let (mu, var) = posterior(&x, &x0_hat, t, sched)?;
            let z = gaussian_field(&mut rng.substream(t as u64), h, w)?;
            let sd = libm::sqrt(var);
            x = mu.zip_map(&z, |m, e| m + sd * e)?;
        }
    }
    Ok(x.clamp(-1.0, 1.0))
}
