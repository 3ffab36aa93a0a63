//! Procedural B-mode phantoms: Rayleigh speckle, exponential depth
//! attenuation, elliptical inclusions and an optional sector mask.
//!
//! Intensity model, before display mapping:
//!
//! ```text
//! I(r, c) = exp(-mu_att * r) * echo(r, c) * speckle(r, c)
//! ```
//!
//! `speckle` has unit mean. The display map clamps `I` to `[0, DISPLAY_MAX]`,
//! scales to `[0, 1]`, zeroes pixels outside the cone, and remaps to `[-1, 1]`.
//! Attenuation acts on intensity directly, not in decibels.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::param_err;
use crate::schedule::Cone;
use crate::{Error, ImageGrid, Result, RngStream};

/// Intensity mapped to the top of the display range.
pub const DISPLAY_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inclusion {
    pub center_row: f64,
    pub center_col: f64,
    pub radius_row: f64,
    pub radius_col: f64,
    /// Multiplier on the background echogenicity, in `[0, 2]`.
    pub echogenicity: f64,
}

impl Inclusion {
    fn contains(&self, row: usize, col: usize) -> bool {
        let dr = (row as f64 - self.center_row) / self.radius_row;
        let dc = (col as f64 - self.center_col) / self.radius_col;
        dr * dr + dc * dc <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    /// Exponential decay rate per row.
    pub mu_att: f64,
    /// Speckle strength: 1 is fully developed Rayleigh speckle, 0 is none.
    /// The speckle field is `1 + speckle_scale * (R - 1)` with `R` unit-mean
    /// Rayleigh, so its mean stays 1.
    pub speckle_scale: f64,
    pub inclusions: Vec<Inclusion>,
    pub cone: Option<Cone>,
    pub background_echo: f64,
}

impl PhantomSpec {
    /// Plain tissue: no inclusions, no cone.
    pub fn new(height: usize, width: usize, mu_att: f64) -> Self {
        Self {
            height,
            width,
            mu_att,
            speckle_scale: 1.0,
            inclusions: Vec::new(),
            cone: None,
            background_echo: 1.0,
        }
    }

    /// Attenuating tissue with one hypoechoic and one hyperechoic inclusion.
    pub fn desk(height: usize, width: usize) -> Self {
        let (h, w) = (height as f64, width as f64);
        let mut spec = Self::new(height, width, 0.05);
        spec.inclusions = alloc::vec![
            Inclusion {
                center_row: h * 0.35,
                center_col: w * 0.35,
                radius_row: h / 7.0,
                radius_col: w / 6.0,
                echogenicity: 0.2,
            },
            Inclusion {
                center_row: h * 0.65,
                center_col: w * 0.7,
                radius_row: h / 9.0,
                radius_col: w / 9.0,
                echogenicity: 1.8,
            },
        ];
        spec
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(crate::error::dim_err!(
                "phantom dimensions must be positive, got {}x{}",
                self.height,
                self.width
            ));
        }
        if !(self.mu_att >= 0.0 && self.mu_att.is_finite()) {
            return Err(param_err!("mu_att must be >= 0, got {}", self.mu_att));
        }
        if !(0.0..=1.0).contains(&self.speckle_scale) {
            return Err(param_err!(
                "speckle_scale must lie in [0, 1], got {}",
                self.speckle_scale
            ));
        }
        if !(self.background_echo >= 0.0 && self.background_echo.is_finite()) {
            return Err(param_err!(
                "background echogenicity must be >= 0, got {}",
                self.background_echo
            ));
        }
        for inc in &self.inclusions {
            if !(inc.radius_row > 0.0 && inc.radius_col > 0.0) {
                return Err(param_err!("inclusion radii must be positive: {inc:?}"));
            }
            if !(0.0..=2.0).contains(&inc.echogenicity) {
                return Err(param_err!(
                    "inclusion echogenicity must lie in [0, 2]: {inc:?}"
                ));
            }
        }
        if let Some(cone) = &self.cone {
            cone.validate(self.height, self.width)?;
        }
        Ok(())
    }

    pub fn in_cone(&self, row: usize, col: usize) -> bool {
        self.cone.is_none_or(|c| c.contains(row, col))
    }

    fn echogenicity(&self, row: usize, col: usize) -> f64 {
        // later inclusions win where they overlap
        self.inclusions
            .iter()
            .rev()
            .find(|inc| inc.contains(row, col))
            .map_or(1.0, |inc| inc.echogenicity)
            * self.background_echo
    }
}

/// Unit-mean Rayleigh draw.
fn rayleigh_unit_mean(rng: &mut RngStream) -> f64 {
    // scale sigma = sqrt(2/pi) gives mean sigma * sqrt(pi/2) = 1
    let sigma = libm::sqrt(2.0 / PI);
    sigma * libm::sqrt(-2.0 * libm::log(rng.uniform_open0()))
}

pub fn phantom_generate(spec: &PhantomSpec, rng: &mut RngStream) -> Result<ImageGrid> {
    spec.validate()?;
    ImageGrid::from_fn(spec.height, spec.width, |r, c| {
        // draw for every pixel so the stream layout ignores the mask
        let speckle = 1.0 + spec.speckle_scale * (rayleigh_unit_mean(rng) - 1.0);
        if !spec.in_cone(r, c) {
            return -1.0;
        }
        let intensity = libm::exp(-spec.mu_att * r as f64) * spec.echogenicity(r, c) * speckle;
        let unit = intensity.clamp(0.0, DISPLAY_MAX) / DISPLAY_MAX;
        2.0 * unit - 1.0
    })
}

/// Copy of `spec` with every inclusion centre redrawn uniformly so that the
/// inclusion's bounding box stays on the grid (when it fits).
pub fn jitter_inclusions(spec: &PhantomSpec, rng: &mut RngStream) -> PhantomSpec {
    let mut out = spec.clone();
    let (h, w) = (spec.height as f64 - 1.0, spec.width as f64 - 1.0);
    for inc in &mut out.inclusions {
        let draw = |rng: &mut RngStream, radius: f64, extent: f64| {
            let lo = radius.min(extent * 0.5);
            let hi = (extent - radius).max(extent * 0.5);
            lo + (hi - lo) * rng.uniform()
        };
        inc.center_row = draw(rng, inc.radius_row, h);
        inc.center_col = draw(rng, inc.radius_col, w);
    }
    out
}

/// Image `index` of a dataset: speckle from stream `(seed, [index])`,
/// inclusion placement from its substream 0.
pub fn phantom_member(spec: &PhantomSpec, seed: u64, index: usize) -> Result<ImageGrid> {
    let mut rng = RngStream::new(seed, &[index as u64]);
    let placed = jitter_inclusions(spec, &mut rng.substream(0));
    phantom_generate(&placed, &mut rng)
}

pub fn phantom_dataset(n: usize, spec: &PhantomSpec, seed: u64) -> Result<Vec<ImageGrid>> {
    if n == 0 {
        return Err(Error::Empty("phantom dataset size must be >= 1".into()));
    }
    (0..n).map(|i| phantom_member(spec, seed, i)).collect()
}

/// Mean of each row over in-cone pixels. Rows with no in-cone pixel give NaN.
pub fn depth_profile(img: &ImageGrid, cone: Option<&Cone>) -> Vec<f64> {
    (0..img.height())
        .map(|r| {
            let (sum, n) = (0..img.width())
                .filter(|&c| cone.is_none_or(|k| k.contains(r, c)))
                .fold((0.0, 0usize), |(s, n), c| (s + img.get(r, c), n + 1));
            if n == 0 {
                f64::NAN
            } else {
                sum / n as f64
            }
        })
        .collect()
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = alloc::vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // average rank for ties
        let r = (i + j) as f64 * 0.5;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation between `values` and their index (depth).
/// Negative means values fall with depth.
pub fn depth_trend(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let rv = ranks(values);
    let mean = (n - 1) as f64 * 0.5;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (i, &r) in rv.iter().enumerate() {
        let dx = i as f64 - mean;
        let dy = r - mean;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if syy == 0.0 {
        return 0.0;
    }
    sxy / libm::sqrt(sxx * syy)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_profile(images: &[ImageGrid]) -> Vec<f64> {
        let h = images[0].height();
        let mut acc = alloc::vec![0.0; h];
        for img in images {
            for (a, v) in acc.iter_mut().zip(depth_profile(img, None)) {
                *a += v;
            }
        }
        acc.iter().map(|v| v / images.len() as f64).collect()
    }

    #[test]
    fn flat_without_attenuation() {
        let spec = PhantomSpec::new(32, 32, 0.0);
        let images = phantom_dataset(64, &spec, 3).unwrap();
        let profile = mean_profile(&images);
        let overall = profile.iter().sum::<f64>() / profile.len() as f64;
        // per-row standard error from the pooled pixel spread
        let pixels: Vec<f64> = images
            .iter()
            .flat_map(|g| g.data().iter().copied())
            .collect();
        let var = pixels
            .iter()
            .map(|v| (v - overall) * (v - overall))
            .sum::<f64>()
            / (pixels.len() - 1) as f64;
        let se = libm::sqrt(var / (64.0 * 32.0));
        // 3-sigma family-wise level spread over 32 rows: two-sided
        // 0.0027 / 32 per row
        let z_row = 3.93;
        let mut chi2 = 0.0;
        for (r, v) in profile.iter().enumerate() {
            let z = (v - overall) / se;
            assert!(z.abs() < z_row, "row {r}: z = {z}");
            chi2 += z * z;
        }
        // chi-square with 31 degrees of freedom, 0.999 quantile
        assert!(chi2 < 61.1, "chi2 {chi2}");
    }

    #[test]
    fn attenuation_gives_decreasing_profile() {
        let spec = PhantomSpec::new(32, 32, 0.05);
        let images = phantom_dataset(64, &spec, 5).unwrap();
        let rho = depth_trend(&mean_profile(&images));
        assert!(rho < -0.9, "spearman {rho}");
        let single = depth_trend(&depth_profile(&images[0], None));
        assert!(single < -0.9, "single image spearman {single}");
    }

    #[test]
    fn hypoechoic_inclusion_is_dark() {
        let mut spec = PhantomSpec::new(32, 32, 0.0);
        let inc = Inclusion {
            center_row: 16.0,
            center_col: 16.0,
            radius_row: 6.0,
            radius_col: 6.0,
            echogenicity: 0.2,
        };
        spec.inclusions.push(inc);
        let mut inside = (0.0, 0);
        let mut outside = (0.0, 0);
        for i in 0..16 {
            // intensities in [0, 1] so the ratio is meaningful
            let img = phantom_generate(&spec, &mut RngStream::new(9, &[i]))
                .unwrap()
                .to_unit_range();
            for r in 0..32 {
                for c in 0..32 {
                    let d = libm::hypot(r as f64 - 16.0, c as f64 - 16.0);
                    if d <= 6.0 {
                        inside.0 += img.get(r, c);
                        inside.1 += 1;
                    } else if d <= 12.0 {
                        outside.0 += img.get(r, c);
                        outside.1 += 1;
                    }
                }
            }
        }
        let mi = inside.0 / inside.1 as f64;
        let mo = outside.0 / outside.1 as f64;
        assert!(mi < 0.5 * mo, "inside {mi} background {mo}");
    }

    #[test]
    fn dataset_base_case_and_determinism() {
        let spec = PhantomSpec::desk(32, 32);
        let plain = PhantomSpec::new(32, 32, 0.05);
        let one = phantom_dataset(1, &plain, 42).unwrap();
        let direct = phantom_generate(&plain, &mut RngStream::new(42, &[0])).unwrap();
        assert_eq!(one, alloc::vec![direct]);
        let a = phantom_dataset(4, &spec, 42).unwrap();
        let b = phantom_dataset(4, &spec, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert!(matches!(phantom_dataset(0, &spec, 1), Err(Error::Empty(_))));
    }

    #[test]
    fn dataset_range_scan() {
        let mut spec = PhantomSpec::desk(32, 32);
        spec.cone = Some(Cone::centered(32, 6.0, 40.0, 8.0));
        let images = phantom_dataset(64, &spec, 8).unwrap();
        for img in &images {
            assert!(img.is_finite());
            assert!(img.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert_eq!(img.get(0, 0), -1.0);
        }
    }

    #[test]
    fn depth_profile_examples() {
        let g = crate::grid_fill(4, 3, 0.25).unwrap();
        assert_eq!(depth_profile(&g, None), alloc::vec![0.25; 4]);
        let step = ImageGrid::from_fn(4, 3, |r, _| if r < 2 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(depth_profile(&step, None), alloc::vec![1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = PhantomSpec::new(8, 8, -0.1);
        assert!(spec.validate().is_err());
        spec.mu_att = 0.1;
        spec.inclusions.push(Inclusion {
            center_row: 1.0,
            center_col: 1.0,
            radius_row: 0.0,
            radius_col: 1.0,
            echogenicity: 1.0,
        });
        assert!(spec.validate().is_err());
        spec.inclusions[0].radius_row = 1.0;
        spec.inclusions[0].echogenicity = 2.5;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spearman_basics() {
        assert!((depth_trend(&[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((depth_trend(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
        assert_eq!(depth_trend(&[2.0, 2.0, 2.0]), 0.0);
    }
}
