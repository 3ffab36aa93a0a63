//! Dense symmetric eigen-solver (cyclic Jacobi) and PSD square roots.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, param_err};
use crate::{Error, Result};

/// Allowed asymmetry `|m_ij - m_ji|`, relative to `max(1, max |m_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-8;
/// Jacobi stops once the off-diagonal Frobenius norm falls below this,
/// relative to `max(1, ||M||_F)`.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Row-major `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() != n * n {
            return Err(dim_err!(
                "{} values do not form a non-empty {n}x{n} matrix",
                data.len()
            ));
        }
        Ok(Self { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.n + c] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for r in 0..self.n {
            for c in 0..self.n {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(dim_err!(
                "cannot multiply {0}x{0} by {1}x{1}",
                self.n,
                other.n
            ));
        }
        let n = self.n;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                for c in 0..n {
                    out.data[r * n + c] += a * other.data[k * n + c];
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.n != other.n {
            return Err(dim_err!("cannot add {0}x{0} and {1}x{1}", self.n, other.n));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self { n: self.n, data })
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.n {
            for c in r + 1..self.n {
                worst = worst.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// `(M + M^T) / 2`.
    pub fn symmetrized(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.n {
            for c in r + 1..self.n {
                let v = 0.5 * (self.get(r, c) + self.get(c, r));
                out.set(r, c, v);
                out.set(c, r, v);
            }
        }
        out
    }

    fn check_symmetric(&self) -> Result<()> {
        let gap = self.max_asymmetry();
        if gap > SYMMETRY_TOL * self.max_abs().max(1.0) {
            return Err(param_err!("matrix is not symmetric (max gap {gap:e})"));
        }
        Ok(())
    }

    fn off_diagonal_norm(&self) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.n {
            for c in 0..self.n {
                if r != c {
                    acc += self.get(r, c) * self.get(r, c);
                }
            }
        }
        libm::sqrt(acc)
    }
}

/// Eigenvalues and eigenvectors (as columns of the returned matrix) of a
/// symmetric matrix.
pub fn symmetric_eigen(m: &SquareMatrix) -> Result<(Vec<f64>, SquareMatrix)> {
    m.check_symmetric()?;
    let n = m.n;
    let mut a = m.symmetrized();
    let mut v = SquareMatrix::identity(n);
    let stop = OFF_DIAGONAL_TOL * m.frobenius().max(1.0);

    let mut sweeps = 0;
    while a.off_diagonal_norm() >= stop {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NumericDegenerate(alloc::format!(
                "Jacobi did not converge in {MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = libm::copysign(1.0, theta) / (theta.abs() + libm::hypot(theta, 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }
    let values = (0..n).map(|i| a.get(i, i)).collect();
    Ok((values, v))
}

/// `A <- J^T A J`, `V <- V J` for the plane rotation in `(p, q)`.
fn rotate(a: &mut SquareMatrix, v: &mut SquareMatrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.n;
    for k in 0..n {
        let (akp, akq) = (a.get(k, p), a.get(k, q));
        a.set(k, p, c * akp - s * akq);
        a.set(k, q, s * akp + c * akq);
    }
    for k in 0..n {
        let (apk, aqk) = (a.get(p, k), a.get(q, k));
        a.set(p, k, c * apk - s * aqk);
        a.set(q, k, s * apk + c * aqk);
    }
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);
    for k in 0..n {
        let (vkp, vkq) = (v.get(k, p), v.get(k, q));
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

/// `Q sqrt(max(L, 0)) Q^T` for symmetric `M = Q L Q^T`. Small negative
/// eigenvalues from round-off are clipped to zero.
pub fn matrix_sqrt_psd(m: &SquareMatrix) -> Result<SquareMatrix> {
    let (values, q) = symmetric_eigen(m)?;
    let n = m.n;
    let roots: Vec<f64> = values.iter().map(|&l| libm::sqrt(l.max(0.0))).collect();
    let mut out = SquareMatrix::zeros(n);
    for r in 0..n {
        for c in r..n {
            let v: f64 = (0..n).map(|k| q.get(r, k) * roots[k] * q.get(c, k)).sum();
            out.set(r, c, v);
            out.set(c, r, v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RngStream;
    use proptest::prelude::*;

    fn random_psd(n: usize, rows: usize, seed: u64) -> SquareMatrix {
        let mut rng = RngStream::new(seed, &[]);
        let a = (0..rows * n)
            .map(|_| rng.standard_normal())
            .collect::<Vec<_>>();
        let mut m = SquareMatrix::zeros(n);
        for r in 0..n {
            for c in 0..n {
                let v: f64 = (0..rows).map(|k| a[k * n + r] * a[k * n + c]).sum();
                m.set(r, c, v);
            }
        }
        m
    }

    fn rel_frobenius_gap(a: &SquareMatrix, b: &SquareMatrix) -> f64 {
        let diff: f64 = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        libm::sqrt(diff) / b.frobenius().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn sqrt_identity_and_diagonal() {
        let i = SquareMatrix::identity(5);
        assert_eq!(matrix_sqrt_psd(&i).unwrap(), i);
        let d = SquareMatrix::diagonal(&[4.0, 9.0]);
        assert_eq!(
            matrix_sqrt_psd(&d).unwrap(),
            SquareMatrix::diagonal(&[2.0, 3.0])
        );
    }

    #[test]
    fn sqrt_squares_back() {
        for (n, rows, seed) in [(3, 5, 1), (8, 8, 2), (16, 4, 3), (64, 100, 4)] {
            let m = random_psd(n, rows, seed);
            let s = matrix_sqrt_psd(&m).unwrap();
            assert_eq!(s.max_asymmetry(), 0.0);
            let back = s.matmul(&s).unwrap();
            let gap = rel_frobenius_gap(&back, &m);
            assert!(gap < 1e-8, "n={n}: {gap}");
            let (vals, _) = symmetric_eigen(&s).unwrap();
            assert!(vals.iter().all(|&v| v >= -1e-8 * s.frobenius()));
        }
    }

    #[test]
    fn eigenvectors_are_orthonormal() {
        let m = random_psd(10, 12, 7);
        let (vals, q) = symmetric_eigen(&m).unwrap();
        let qtq = q.transpose().matmul(&q).unwrap();
        assert!(rel_frobenius_gap(&qtq, &SquareMatrix::identity(10)) < 1e-12);
        let recon = q
            .matmul(&SquareMatrix::diagonal(&vals))
            .unwrap()
            .matmul(&q.transpose())
            .unwrap();
        assert!(rel_frobenius_gap(&recon, &m) < 1e-12);
    }

    #[test]
    fn rejects_asymmetric_and_bad_shapes() {
        let m = SquareMatrix::new(2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(matrix_sqrt_psd(&m), Err(Error::Parameter(_))));
        assert!(SquareMatrix::new(2, vec![1.0; 3]).is_err());
        assert!(SquareMatrix::new(0, vec![]).is_err());
    }

    #[test]
    fn clips_tiny_negative_eigenvalues() {
        let m = SquareMatrix::diagonal(&[1.0, -1e-12]);
        let s = matrix_sqrt_psd(&m).unwrap();
        assert_eq!(s, SquareMatrix::diagonal(&[1.0, 0.0]));
    }

    proptest! {
        #[test]
        fn sqrt_is_symmetric_psd_root(n in 1usize..7, rows in 1usize..9, seed in any::<u64>()) {
            let m = random_psd(n, rows, seed);
            let s = matrix_sqrt_psd(&m).unwrap();
            prop_assert_eq!(s.max_asymmetry(), 0.0);
            prop_assert!(rel_frobenius_gap(&s.matmul(&s).unwrap(), &m) < 1e-8);
        }
    }
}
