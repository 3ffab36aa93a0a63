//! Seeded, splittable random streams.
//!
//! A stream is named by `(seed, path)`. The path is an ordered list of integer
//! labels such as `[iteration, batch_item, purpose]`; extending it gives an
//! independent substream. The 256-bit ChaCha8 key is derived by folding the
//! seed and every path label through the SplitMix64 finalizer, so streams are
//! reproducible across platforms and never depend on consumption order of
//! sibling streams.
//!
//! Normals use the Box-Muller transform with caching of the second variate.
//! Generator family: ChaCha8 (counter based), key schedule: SplitMix64 fold.
//! Changing either changes every seeded output in the workspace.

use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::{ImageGrid, Result};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(seed: u64, path: &[u64]) -> [u8; 32] {
    let mut acc = splitmix64(seed);
    // length-prefix so [] and [0] differ
    acc = splitmix64(acc ^ (path.len() as u64).wrapping_mul(GOLDEN));
    for &label in path {
        acc = splitmix64(acc ^ splitmix64(label));
    }
    let mut key = [0u8; 32];
    let mut lane = acc;
    for chunk in key.chunks_exact_mut(8) {
        lane = splitmix64(lane);
        chunk.copy_from_slice(&lane.to_le_bytes());
    }
    key
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    path: Vec<u64>,
    core: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64, path: &[u64]) -> Self {
        Self {
            seed,
            path: path.to_vec(),
            core: ChaCha8Rng::from_seed(derive_key(seed, path)),
            spare_normal: None,
        }
    }

    /// Fresh stream at `path ++ [label]`. Does not consume `self`.
    pub fn substream(&self, label: u64) -> Self {
        let mut path = self.path.clone();
        path.push(label);
        Self::new(self.seed, &path)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`.
    #[inline]
    pub fn uniform_open0(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` (Lemire multiply-shift with rejection).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        let radius = libm::sqrt(-2.0 * libm::log(u1));
        let (s, c) = libm::sincos(core::f64::consts::TAU * u2);
        self.spare_normal = Some(radius * s);
        radius * c
    }
}

/// I.i.d. standard normal field, consuming `rng`.
pub fn gaussian_field(rng: &mut RngStream, height: usize, width: usize) -> Result<ImageGrid> {
    ImageGrid::from_fn(height, width, |_, _| rng.standard_normal())
}
