//! 3x3 same-padding convolution on channel-major `[c][h][w]` buffers.

use alloc::vec;
use alloc::vec::Vec;

use super::{KERNEL, TAPS};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

#[inline]
pub(super) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub(super) fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Valid output columns `[lo, hi)` for kernel column `kx` (input offset `kx - 1`).
#[inline]
fn span(kx: usize, w: usize) -> (usize, usize) {
    match kx {
        0 => (1, w),
        1 => (0, w),
        _ => (0, w - 1),
    }
}

/// `out[co] = bias[co] + sum_ci weight[co][ci] * input[ci]`.
pub(super) fn conv3x3(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    cout: usize,
) -> Vec<f64> {
    let n = h * w;
    let mut out = vec![0.0; cout * n];
    for co in 0..cout {
        let plane = &mut out[co * n..(co + 1) * n];
        plane.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let src = &input[ci * n..(ci + 1) * n];
            let taps = &weight[(co * cin + ci) * TAPS..(co * cin + ci + 1) * TAPS];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let k = taps[ky * KERNEL + kx];
                    let (lo, hi) = span(kx, w);
                    for y in 0..h {
                        let Some(sy) = (y + ky).checked_sub(1).filter(|&r| r < h) else {
                            continue;
                        };
                        let dst = &mut plane[y * w + lo..y * w + hi];
                        let s0 = sy * w + lo + kx - 1;
                        let row = &src[s0..s0 + (hi - lo)];
                        for (d, &s) in dst.iter_mut().zip(row) {
                            *d += k * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight, bias and (optionally) input gradients for [`conv3x3`].
#[allow(clippy::too_many_arguments)]
pub(super) fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    grad_out: &[f64],
    cout: usize,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    mut grad_input: Option<&mut [f64]>,
) {
    let n = h * w;
    for co in 0..cout {
        let g = &grad_out[co * n..(co + 1) * n];
        grad_bias[co] += g.iter().sum::<f64>();
        for ci in 0..cin {
            let src = &input[ci * n..(ci + 1) * n];
            let base = (co * cin + ci) * TAPS;
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let (lo, hi) = span(kx, w);
                    let k = weight[base + ky * KERNEL + kx];
                    let mut acc = 0.0;
                    for y in 0..h {
                        let Some(sy) = (y + ky).checked_sub(1).filter(|&r| r < h) else {
                            continue;
                        };
                        let gr = &g[y * w + lo..y * w + hi];
                        let s0 = sy * w + lo + kx - 1;
                        let row = &src[s0..s0 + (hi - lo)];
                        acc += gr.iter().zip(row).map(|(&a, &b)| a * b).sum::<f64>();
                        if let Some(gi) = grad_input.as_deref_mut() {
                            let dst = &mut gi[ci * n + s0..ci * n + s0 + (hi - lo)];
                            for (d, &a) in dst.iter_mut().zip(gr) {
                                *d += k * a;
                            }
                        }
                    }
                    grad_weight[base + ky * KERNEL + kx] += acc;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition with explicit bounds checks.
    fn naive(
        input: &[f64],
        cin: usize,
        h: usize,
        w: usize,
        weight: &[f64],
        cout: usize,
    ) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..3isize {
                            for kx in 0..3isize {
                                let (sy, sx) = (y + ky - 1, x + kx - 1);
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weight[(co * cin + ci) * 9 + (ky * 3 + kx) as usize]
                                    * input[ci * h * w + (sy * w as isize + sx) as usize];
                            }
                        }
                    }
                    out[co * h * w + (y * w as isize + x) as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_convolution() {
        let (cin, cout, h, w) = (2, 3, 5, 4);
        let input: Vec<f64> = (0..cin * h * w)
            .map(|i| ((i * 37 % 11) as f64) - 5.0)
            .collect();
        let weight: Vec<f64> = (0..cout * cin * 9)
            .map(|i| ((i * 13 % 7) as f64) * 0.1 - 0.3)
            .collect();
        let got = conv3x3(&input, cin, h, w, &weight, &[0.0; 3], cout);
        let want = naive(&input, cin, h, w, &weight, cout);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn silu_derivative_matches_difference() {
        for &x in &[-4.0, -1.0, 0.0, 0.3, 2.5] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }
}
