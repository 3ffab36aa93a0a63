use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{matrix_sqrt_psd, symmetric_eigen, SquareMatrix};
use crate::error::dim_err;
use crate::{Error, ImageGrid, Result};

/// Side length of the block-mean grid used by the pixel-statistics embedding.
pub const BLOCKS: usize = 8;

/// Gaussian fit of a set of feature vectors: sample mean and unbiased
/// covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub dim: usize,
    pub mean: Vec<f64>,
    pub cov: SquareMatrix,
    pub count: usize,
}

impl FeatureStats {
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::Empty(alloc::format!(
                "feature statistics need at least 2 vectors, got {}",
                vectors.len()
            )));
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(dim_err!("feature vectors are empty"));
        }
        if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
            return Err(dim_err!(
                "feature vector {i} has dimension {}, expected {dim}",
                v.len()
            ));
        }
        let n = vectors.len() as f64;
        let mut mean = vec![0.0; dim];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);

        let mut cov = SquareMatrix::zeros(dim);
        let mut centered = vec![0.0; dim];
        for v in vectors {
            for ((c, x), m) in centered.iter_mut().zip(v).zip(&mean) {
                *c = x - m;
            }
            for r in 0..dim {
                for c in r..dim {
                    cov.set(r, c, cov.get(r, c) + centered[r] * centered[c]);
                }
            }
        }
        for r in 0..dim {
            for c in r..dim {
                let v = cov.get(r, c) / (n - 1.0);
                cov.set(r, c, v);
                cov.set(c, r, v);
            }
        }
        Ok(Self {
            dim,
            mean,
            cov,
            count: vectors.len(),
        })
    }
}

/// Block means on an 8x8 grid, flattened row-major (dimension 64). Block
/// edges are `floor(i * H / 8)`, so sizes differ by at most one pixel when
/// the image side is not a multiple of 8.
pub fn pixel_stat_features(img: &ImageGrid) -> Result<Vec<f64>> {
    let (h, w) = img.shape();
    if h < BLOCKS || w < BLOCKS {
        return Err(dim_err!(
            "pixel-stat embedding needs at least {BLOCKS}x{BLOCKS} images, got {h}x{w}"
        ));
    }
    let mut out = Vec::with_capacity(BLOCKS * BLOCKS);
    for br in 0..BLOCKS {
        let rows = br * h / BLOCKS..(br + 1) * h / BLOCKS;
        for bc in 0..BLOCKS {
            let cols = bc * w / BLOCKS..(bc + 1) * w / BLOCKS;
            let count = (rows.len() * cols.len()) as f64;
            let sum: f64 = rows
                .clone()
                .map(|r| img.row(r)[cols.clone()].iter().sum::<f64>())
                .sum();
            out.push(sum / count);
        }
    }
    Ok(out)
}

/// Pixel-statistics embedding of every image, then [`FeatureStats`].
pub fn feature_embed(images: &[ImageGrid]) -> Result<FeatureStats> {
    if images.len() < 2 {
        return Err(Error::Empty(alloc::format!(
            "embedding needs at least 2 images, got {}",
            images.len()
        )));
    }
    let vectors = images
        .iter()
        .map(pixel_stat_features)
        .collect::<Result<Vec<_>>>()?;
    FeatureStats::from_vectors(&vectors)
}

/// Squared Fréchet distance between two Gaussians:
/// `|m1 - m2|^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)`, clipped at zero.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim != b.dim {
        return Err(dim_err!(
            "feature dimensions differ: {} vs {}",
            a.dim,
            b.dim
        ));
    }
    if a.mean == b.mean && a.cov == b.cov {
        return Ok(0.0);
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let root_a = matrix_sqrt_psd(&a.cov)?;
    let inner = root_a.matmul(&b.cov)?.matmul(&root_a)?.symmetrized();
    let (eig, _) = symmetric_eigen(&inner)?;
    let cross: f64 = eig.iter().map(|&l| libm::sqrt(l.max(0.0))).sum();
    let d2 = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(d2.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{grid_fill, RngStream};

    fn stats(mean: &[f64], var: &[f64]) -> FeatureStats {
        FeatureStats {
            dim: mean.len(),
            mean: mean.to_vec(),
            cov: SquareMatrix::diagonal(var),
            count: 2,
        }
    }

    #[test]
    fn identical_images_have_zero_covariance() {
        let img = grid_fill(16, 16, 0.3).unwrap();
        let s = feature_embed(&[img.clone(), img]).unwrap();
        assert_eq!(s.dim, 64);
        assert!(s.cov.data().iter().all(|&v| v == 0.0));
        assert!(s.mean.iter().all(|&m| (m - 0.3).abs() < 1e-15));
    }

    #[test]
    fn zeros_and_ones() {
        let s =
            feature_embed(&[grid_fill(8, 8, 0.0).unwrap(), grid_fill(8, 8, 1.0).unwrap()]).unwrap();
        assert!(s.mean.iter().all(|&m| m == 0.5));
        for r in 0..64 {
            for c in 0..64 {
                // unbiased variance of {0, 1}, and every block moves together
                assert_eq!(s.cov.get(r, c), 0.5);
            }
        }
    }

    #[test]
    fn block_mean_variance_law() {
        // 64x64 images: 8x8 blocks of 64 pixels, so variance shrinks 64-fold
        let mut rng = RngStream::new(11, &[]);
        let images: Vec<_> = (0..1000)
            .map(|_| ImageGrid::from_fn(64, 64, |_, _| rng.standard_normal()).unwrap())
            .collect();
        let s = feature_embed(&images).unwrap();
        for i in 0..64 {
            let v = s.cov.get(i, i);
            assert!((v - 1.0 / 64.0).abs() < 0.1 / 64.0, "coordinate {i}: {v}");
        }
    }

    #[test]
    fn embedding_errors() {
        let img = grid_fill(8, 8, 0.0).unwrap();
        assert!(matches!(feature_embed(&[img]), Err(Error::Empty(_))));
        let small = grid_fill(7, 8, 0.0).unwrap();
        assert!(feature_embed(&[small.clone(), small]).is_err());
        assert!(FeatureStats::from_vectors(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    #[test]
    fn uneven_blocks_cover_every_pixel() {
        let img = ImageGrid::from_fn(13, 11, |r, c| (r * 11 + c) as f64).unwrap();
        let f = pixel_stat_features(&img).unwrap();
        assert_eq!(f.len(), 64);
        let mut weighted = 0.0;
        for br in 0..8 {
            for bc in 0..8 {
                let n = ((br + 1) * 13 / 8 - br * 13 / 8) * ((bc + 1) * 11 / 8 - bc * 11 / 8);
                weighted += f[br * 8 + bc] * n as f64;
            }
        }
        assert!((weighted - img.data().iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn frechet_identical_is_zero() {
        let s = stats(&[0.1, 0.2, -0.3], &[1.0, 2.0, 0.5]);
        assert!(frechet_distance(&s, &s).unwrap() < 1e-12);
    }

    #[test]
    fn frechet_univariate_closed_form() {
        let d = frechet_distance(&stats(&[0.0], &[1.0]), &stats(&[1.0], &[4.0])).unwrap();
        assert!((d - 2.0).abs() < 1e-9, "{d}");
    }

    #[test]
    fn frechet_diagonal_closed_form() {
        let m1 = [0.5, -1.0, 2.0, 0.0];
        let v1 = [1.0, 0.25, 3.0, 0.7];
        let m2 = [0.0, 1.0, 2.5, -0.2];
        let v2 = [2.0, 0.5, 0.1, 0.7];
        let want: f64 = (0..4)
            .map(|i| {
                (m1[i] - m2[i]) * (m1[i] - m2[i]) + (libm::sqrt(v1[i]) - libm::sqrt(v2[i])).powi(2)
            })
            .sum();
        let got = frechet_distance(&stats(&m1, &v1), &stats(&m2, &v2)).unwrap();
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn frechet_is_symmetric_on_full_covariances() {
        let mut rng = RngStream::new(3, &[]);
        let draw = |rng: &mut RngStream, shift: f64| -> Vec<Vec<f64>> {
            (0..40)
                .map(|_| (0..6).map(|_| rng.standard_normal() + shift).collect())
                .collect()
        };
        let a = FeatureStats::from_vectors(&draw(&mut rng, 0.0)).unwrap();
        let b = FeatureStats::from_vectors(&draw(&mut rng, 0.3)).unwrap();
        let ab = frechet_distance(&a, &b).unwrap();
        let ba = frechet_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
        assert!(ab > 0.0);
        assert_eq!(frechet_distance(&a, &a).unwrap(), 0.0);
        // same statistics through the general path
        let mut nudged = a.clone();
        nudged.mean[0] += 1e-300;
        assert!(frechet_distance(&a, &nudged).unwrap() < 1e-8);
    }

    #[test]
    fn frechet_dim_mismatch() {
        assert!(matches!(
            frechet_distance(&stats(&[0.0], &[1.0]), &stats(&[0.0, 0.0], &[1.0, 1.0])),
            Err(Error::Dimension(_))
        ));
    }
}
