//! Time-only alpha schedules and space-time B-map schedules.
//!
//! All per-timestep sequences are 1-based in the public API: `t` runs over
//! `1..=T`, and index 0 denotes the clean image (`alpha_bar(0) = 1`,
//! `bmap_bar(0) = 1`).

use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::error::{dim_err, param_err};
use crate::{grid_fill, Error, ImageGrid, Result};

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Upper clamp on any beta of the cosine schedule.
pub const MAX_BETA: f64 = 0.999;
pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaKind {
    Linear,
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTable {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl ScheduleTable {
    /// Builds a table from raw betas, each in `(0, 1)`.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(dim_err!("schedule needs at least one timestep"));
        }
        if let Some(b) = beta.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
            return Err(param_err!("beta {b} outside (0, 1)"));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Index {
                index: t,
                len: self.steps(),
            });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// Cumulative product; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

fn cosine_f(u: f64, steps: f64) -> f64 {
    let c = libm::cos((u / steps + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2);
    c * c
}

pub fn alpha_schedule(kind: AlphaKind, steps: usize) -> Result<ScheduleTable> {
    if steps == 0 {
        return Err(dim_err!("schedule needs T >= 1"));
    }
    let betas = match kind {
        AlphaKind::Linear => (0..steps)
            .map(|i| {
                if steps == 1 {
                    LINEAR_BETA_START
                } else {
                    LINEAR_BETA_START
                        + (LINEAR_BETA_END - LINEAR_BETA_START) * i as f64 / (steps - 1) as f64
                }
            })
            .collect(),
        AlphaKind::Cosine => {
            let n = steps as f64;
            let f0 = cosine_f(0.0, n);
            (1..=steps)
                .map(|t| {
                    let prev = cosine_f((t - 1) as f64, n) / f0;
                    let cur = cosine_f(t as f64, n) / f0;
                    (1.0 - cur / prev).min(MAX_BETA)
                })
                .collect()
        }
    };
    ScheduleTable::from_betas(betas)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaKind {
    SquareRoot,
    Linear,
}

/// Minimum B-map value `gamma_t` for `t = 0..=T`, from 1 down to `1 - eps_b`.
pub fn gamma_trajectory(kind: GammaKind, steps: usize, eps_b: f64) -> Result<Vec<f64>> {
    check_eps_b(eps_b)?;
    if steps == 0 {
        return Err(dim_err!("gamma trajectory needs T >= 1"));
    }
    let n = steps as f64;
    Ok((0..=steps)
        .map(|t| {
            let frac = t as f64 / n;
            match kind {
                GammaKind::SquareRoot => 1.0 - eps_b * libm::sqrt(frac),
                GammaKind::Linear => 1.0 - eps_b * frac,
            }
        })
        .collect())
}

fn check_eps_b(eps_b: f64) -> Result<()> {
    if !(eps_b > 0.0 && eps_b < 1.0) {
        return Err(param_err!("eps_b must lie in (0, 1), got {eps_b}"));
    }
    Ok(())
}

/// Sector-shaped field of view of a curvilinear probe, in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cone {
    pub apex_row: f64,
    pub apex_col: f64,
    pub half_angle_deg: f64,
    /// Pixels closer than this to the apex are outside the field of view.
    pub near_radius: f64,
}

impl Cone {
    /// Symmetric cone whose apex sits `apex_above` pixels above the top row.
    pub fn centered(width: usize, apex_above: f64, half_angle_deg: f64, near_radius: f64) -> Self {
        Self {
            apex_row: -apex_above,
            apex_col: (width as f64 - 1.0) * 0.5,
            half_angle_deg,
            near_radius,
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        let dr = row as f64 - self.apex_row;
        let dc = col as f64 - self.apex_col;
        if dr <= 0.0 {
            return false;
        }
        let dist = libm::hypot(dr, dc);
        if dist < self.near_radius {
            return false;
        }
        libm::atan2(libm::fabs(dc), dr) <= self.half_angle_deg.to_radians()
    }

    pub fn mask(&self, height: usize, width: usize) -> Result<ImageGrid> {
        ImageGrid::from_fn(
            height,
            width,
            |r, c| if self.contains(r, c) { 1.0 } else { 0.0 },
        )
    }

    pub(crate) fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !(self.half_angle_deg > 0.0 && self.half_angle_deg <= 90.0) {
            return Err(param_err!(
                "cone half-angle must lie in (0, 90] degrees, got {}",
                self.half_angle_deg
            ));
        }
        if self.near_radius.is_nan()
            || self.near_radius < 0.0
            || !self.apex_row.is_finite()
            || !self.apex_col.is_finite()
        {
            return Err(param_err!("invalid cone geometry {self:?}"));
        }
        let hits = (0..height).any(|r| (0..width).any(|c| self.contains(r, c)));
        if !hits {
            return Err(param_err!(
                "cone does not intersect the {height}x{width} grid"
            ));
        }
        Ok(())
    }
}

/// Value of B-map pixels outside the cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutsideConeMode {
    /// Constant `gamma_t`: background is noised fastest.
    #[default]
    Gamma,
    /// Constant 1: background follows the plain schedule.
    One,
    /// Same depth ramp as inside the cone.
    RowValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BMapSpec {
    pub height: usize,
    pub width: usize,
    pub eps_b: f64,
    pub gamma_kind: GammaKind,
    pub cone: Option<Cone>,
    pub outside_cone_mode: OutsideConeMode,
}

impl BMapSpec {
    /// Full-frame spec (no cone) with the square-root gamma trajectory.
    pub fn new(height: usize, width: usize, eps_b: f64) -> Self {
        Self {
            height,
            width,
            eps_b,
            gamma_kind: GammaKind::SquareRoot,
            cone: None,
            outside_cone_mode: OutsideConeMode::default(),
        }
    }

    pub fn with_cone(mut self, cone: Cone) -> Self {
        self.cone = Some(cone);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(dim_err!(
                "B-map dimensions must be positive, got {}x{}",
                self.height,
                self.width
            ));
        }
        check_eps_b(self.eps_b)?;
        if let Some(cone) = &self.cone {
            cone.validate(self.height, self.width)?;
        }
        Ok(())
    }

    pub fn in_cone(&self, row: usize, col: usize) -> bool {
        self.cone.is_none_or(|c| c.contains(row, col))
    }

    /// Per-pixel weight `w` such that `B = 1 - w * (1 - gamma)`.
    fn depth_weight(&self, row: usize, col: usize) -> f64 {
        let ramp = if self.height > 1 {
            row as f64 / (self.height - 1) as f64
        } else {
            0.0
        };
        if self.in_cone(row, col) {
            return ramp;
        }
        match self.outside_cone_mode {
            OutsideConeMode::Gamma => 1.0,
            OutsideConeMode::One => 0.0,
            OutsideConeMode::RowValue => ramp,
        }
    }
}

/// B-map for one timestep: 1 on the top row, `gamma_t` on the bottom row,
/// linear in between.
pub fn build_bmap(gamma_t: f64, spec: &BMapSpec) -> Result<ImageGrid> {
    spec.validate()?;
    if !(gamma_t <= 1.0 && gamma_t >= 1.0 - spec.eps_b) {
        return Err(param_err!(
            "gamma {gamma_t} outside [{}, 1]",
            1.0 - spec.eps_b
        ));
    }
    let drop = 1.0 - gamma_t;
    ImageGrid::from_fn(spec.height, spec.width, |r, c| {
        let w = spec.depth_weight(r, c);
        if w == 1.0 {
            gamma_t
        } else {
            1.0 - w * drop
        }
    })
}

/// Per-timestep B-maps, their cumulative products, and the closed-form signal
/// coefficients `alpha_bar_t * Bbar_t`. Index 0 holds the all-ones grids.
#[derive(Debug, Clone)]
pub struct BMapStack {
    spec: BMapSpec,
    gamma: Vec<f64>,
    bmaps: Vec<ImageGrid>,
    bmap_bars: Vec<ImageGrid>,
    signal: Vec<ImageGrid>,
}

pub fn build_bmap_stack(sched: &ScheduleTable, spec: &BMapSpec) -> Result<BMapStack> {
    spec.validate()?;
    let steps = sched.steps();
    let gamma = gamma_trajectory(spec.gamma_kind, steps, spec.eps_b)?;
    let ones = grid_fill(spec.height, spec.width, 1.0)?;
    let mut bmaps = Vec::with_capacity(steps + 1);
    let mut bmap_bars = Vec::with_capacity(steps + 1);
    let mut signal = Vec::with_capacity(steps + 1);
    bmaps.push(ones.clone());
    bmap_bars.push(ones.clone());
    signal.push(ones);
    for t in 1..=steps {
        let b = build_bmap(gamma[t], spec)?;
        let bar = crate::hadamard(&bmap_bars[t - 1], &b)?;
        let ab = sched.alpha_bar(t);
        signal.push(bar.map(|v| ab * v));
        bmaps.push(b);
        bmap_bars.push(bar);
    }
    Ok(BMapStack {
        spec: spec.clone(),
        gamma,
        bmaps,
        bmap_bars,
        signal,
    })
}

impl BMapStack {
    pub fn spec(&self) -> &BMapSpec {
        &self.spec
    }

    pub fn steps(&self) -> usize {
        self.bmaps.len() - 1
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.spec.height, self.spec.width)
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma[t]
    }

    pub fn bmap(&self, t: usize) -> &ImageGrid {
        &self.bmaps[t]
    }

    pub fn bmap_bar(&self, t: usize) -> &ImageGrid {
        &self.bmap_bars[t]
    }

    /// `alpha_bar_t * Bbar_t`, with `signal_coeff(0)` all ones.
    pub fn signal_coeff(&self, t: usize) -> &ImageGrid {
        &self.signal[t]
    }

    /// Per-step coefficient `alpha_t * B_t`.
    pub fn step_coeff(&self, sched: &ScheduleTable, t: usize) -> ImageGrid {
        let a = sched.alpha(t);
        self.bmaps[t].map(|b| a * b)
    }

    pub(crate) fn check_compatible(&self, sched: &ScheduleTable, t: usize) -> Result<()> {
        if sched.steps() != self.steps() {
            return Err(dim_err!(
                "schedule has {} steps but B-map stack has {}",
                sched.steps(),
                self.steps()
            ));
        }
        sched.check_t(t)
    }
}

/// Signal-to-noise ratio of the closed-form marginal at every pixel.
pub fn per_pixel_snr(stack: &BMapStack, t: usize) -> Result<ImageGrid> {
    if t == 0 || t > stack.steps() {
        return Err(Error::Index {
            index: t,
            len: stack.steps(),
        });
    }
    Ok(stack.signal_coeff(t).map(|a| a / (1.0 - a)))
}
