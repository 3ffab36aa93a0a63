//! Image-quality metrics: PSNR, SSIM and Fréchet distance between Gaussian
//! fits of feature embeddings.

mod frechet;
mod linalg;

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, param_err};
use crate::{ImageGrid, Result};

pub use frechet::{feature_embed, frechet_distance, pixel_stat_features, FeatureStats, BLOCKS};
pub use linalg::{matrix_sqrt_psd, symmetric_eigen, SquareMatrix};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn psnr(a: &ImageGrid, b: &ImageGrid, max_value: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    if !(max_value > 0.0 && max_value.is_finite()) {
        return Err(param_err!("max_value must be positive, got {max_value}"));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * libm::log10(max_value * max_value / mse)).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = libm::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable Gaussian filter over valid positions only.
fn filter_valid(data: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WINDOW).map(|k| win[k] * data[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WINDOW)
                .map(|k| win[k] * rows[(r + k) * ow + c])
                .sum();
        }
    }
    out
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03 and dynamic range 1, averaged over valid window positions.
pub fn ssim(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(dim_err!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        ));
    }
    let win = gaussian_window();
    let prod = |x: &ImageGrid, y: &ImageGrid| -> Vec<f64> {
        x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect()
    };
    let mu_a = filter_valid(a.data(), h, w, &win);
    let mu_b = filter_valid(b.data(), h, w, &win);
    let e_aa = filter_valid(&prod(a, a), h, w, &win);
    let e_bb = filter_valid(&prod(b, b), h, w, &win);
    let e_ab = filter_valid(&prod(a, b), h, w, &win);

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}
