//! Depth-attenuated denoising diffusion for ultrasound-like images.
//!
//! The forward process multiplies the usual DDPM noise schedule point-wise by
//! per-pixel "B-maps" that decay with depth, so the bottom of an image (far from
//! the probe) reaches the Gaussian prior before the top does. Everything in this
//! crate is pure computation over [`ImageGrid`]s: schedules, the forward and
//! reverse kernels, a small trainable epsilon-prediction network, a procedural
//! B-mode phantom generator and image-quality metrics.
//!
//! The crate is `no_std` and only needs `alloc`. File formats and the command
//! line live in the `usdiff` companion crate.
//!
//! Orientation: row 0 is the top of the image, i.e. the shallowest depth.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod denoiser;
pub mod diffusion;
mod error;
pub mod grid;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod schedule;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{grid_fill, hadamard, ImageGrid};
pub use rng::{gaussian_field, RngStream};
