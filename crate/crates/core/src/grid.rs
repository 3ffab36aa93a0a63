//! Row-major 2-D grids of `f64`.
//!
//! One carrier type is used for images, B-maps, noise fields and per-pixel
//! coefficients. Row 0 is the top of the image (nearest the probe).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::dim_err;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(dim_err!(
                "{} values supplied for a {height}x{width} grid",
                data.len()
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        grid_fill(height, width, 0.0)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(height, width)?;
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false: grids have at least one pixel.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combination of two equally shaped grids.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(dim_err!(
                "shape mismatch: {}x{} vs {}x{}",
                self.height,
                self.width,
                other.height,
                other.width
            ));
        }
        Ok(())
    }

    pub fn ensure_shape(&self, height: usize, width: usize) -> Result<()> {
        if self.shape() != (height, width) {
            return Err(dim_err!(
                "expected a {height}x{width} grid, got {}x{}",
                self.height,
                self.width
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean of rows `rows` (all columns).
    pub fn band_mean(&self, rows: core::ops::Range<usize>) -> f64 {
        let n = rows.len() * self.width;
        rows.map(|r| self.row(r).iter().sum::<f64>()).sum::<f64>() / n as f64
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Self {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Diffusion domain `[-1, 1]` to metric domain `[0, 1]`.
    pub fn to_unit_range(&self) -> Self {
        self.map(|v| (v + 1.0) * 0.5)
    }

    /// Metric domain `[0, 1]` to diffusion domain `[-1, 1]`.
    pub fn to_signed_range(&self) -> Self {
        self.map(|v| v * 2.0 - 1.0)
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(dim_err!(
            "grid dimensions must be positive, got {height}x{width}"
        ));
    }
    Ok(())
}

pub fn grid_fill(height: usize, width: usize, value: f64) -> Result<ImageGrid> {
    check_dims(height, width)?;
    Ok(ImageGrid {
        height,
        width,
        data: vec![value; height * width],
    })
}

/// Point-wise product `a ⊙ b`.
pub fn hadamard(a: &ImageGrid, b: &ImageGrid) -> Result<ImageGrid> {
    a.zip_map(b, |x, y| x * y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fill_shapes() {
        let g = grid_fill(2, 2, 1.0).unwrap();
        assert_eq!(g.data(), &[1.0; 4]);
        let g = grid_fill(1, 3, 0.0).unwrap();
        assert_eq!(g.shape(), (1, 3));
        assert_eq!(g.data(), &[0.0; 3]);
        let g = grid_fill(3, 1, -0.5).unwrap();
        assert_eq!(g.shape(), (3, 1));
        assert!(g.data().iter().all(|&v| v == -0.5));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            grid_fill(0, 3, 1.0),
            Err(crate::Error::Dimension(_))
        ));
        assert!(matches!(
            grid_fill(3, 0, 1.0),
            Err(crate::Error::Dimension(_))
        ));
        assert!(ImageGrid::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn hadamard_examples() {
        let a = ImageGrid::new(1, 2, vec![2.0, 3.0]).unwrap();
        let b = ImageGrid::new(1, 2, vec![4.0, 5.0]).unwrap();
        assert_eq!(hadamard(&a, &b).unwrap().data(), &[8.0, 15.0]);

        let ones = grid_fill(1, 2, 1.0).unwrap();
        assert_eq!(hadamard(&a, &ones).unwrap(), a);
        let zeros = grid_fill(1, 2, 0.0).unwrap();
        assert_eq!(hadamard(&zeros, &a).unwrap(), zeros);
    }

    #[test]
    fn hadamard_shape_mismatch() {
        let a = grid_fill(2, 3, 1.0).unwrap();
        let b = grid_fill(3, 2, 1.0).unwrap();
        assert!(matches!(hadamard(&a, &b), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn range_remaps_are_inverse() {
        let g = ImageGrid::new(1, 3, vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(g.to_unit_range().data(), &[0.0, 0.5, 1.0]);
        assert_eq!(g.to_unit_range().to_signed_range(), g);
    }

    fn grid3() -> impl Strategy<Value = (ImageGrid, ImageGrid, ImageGrid)> {
        (1usize..5, 1usize..5).prop_flat_map(|(h, w)| {
            let v = || proptest::collection::vec(-1e3f64..1e3, h * w);
            (v(), v(), v()).prop_map(move |(a, b, c)| {
                (
                    ImageGrid::new(h, w, a).unwrap(),
                    ImageGrid::new(h, w, b).unwrap(),
                    ImageGrid::new(h, w, c).unwrap(),
                )
            })
        })
    }

    proptest! {
        #[test]
        fn hadamard_commutative_and_associative((a, b, c) in grid3()) {
            prop_assert_eq!(hadamard(&a, &b).unwrap(), hadamard(&b, &a).unwrap());
            let left = hadamard(&hadamard(&a, &b).unwrap(), &c).unwrap();
            let right = hadamard(&a, &hadamard(&b, &c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                // each side carries two roundings
                let ulp = 2.0 * f64::EPSILON * x.abs().max(y.abs());
                prop_assert!((x - y).abs() <= ulp, "{} vs {}", x, y);
            }
        }
    }
}
