//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Keys starting with `manifest.`
//! are bookkeeping written by [`crate::manifest`] and skipped on load, so a
//! run manifest is itself a valid config file.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, ensure, Context, Result};
use usdiff_core::denoiser::{TrainConfig, DEFAULT_LR};
use usdiff_core::phantom::PhantomSpec;
use usdiff_core::schedule::{
    alpha_schedule, AlphaKind, BMapSpec, Cone, GammaKind, OutsideConeMode, ScheduleTable,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub steps: usize,
    pub eps_b: f64,
    pub gamma_kind: GammaKind,
    pub alpha_kind: AlphaKind,
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub iterations: usize,
    pub seed: u64,
    pub cone: bool,
    pub cone_apex_above: f64,
    pub cone_half_angle: f64,
    pub cone_near_radius: f64,
    pub outside_cone_mode: OutsideConeMode,
    pub mu_att: f64,
    pub speckle_scale: f64,
    pub inclusions: bool,
    pub dataset_size: usize,
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    /// Timesteps for `bmaps`; empty means `0, T/4, T/2, 3T/4, T`.
    pub timesteps: Vec<usize>,
    /// Number of log-spaced timesteps for `forward` panels and `sample`
    /// snapshots.
    pub frames: usize,
    pub input: Option<PathBuf>,
    pub n_samples: usize,
    pub snapshots: bool,
    pub checkpoint: Option<PathBuf>,
    pub eval_a: Option<PathBuf>,
    pub eval_b: Option<PathBuf>,
    pub features_a: Option<PathBuf>,
    pub features_b: Option<PathBuf>,
    pub verify_samples: usize,
    pub verify_corrupt_posterior_mean: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            eps_b: 0.04,
            gamma_kind: GammaKind::SquareRoot,
            alpha_kind: AlphaKind::Cosine,
            height: 32,
            width: 32,
            hidden: 8,
            batch_size: 4,
            lr: DEFAULT_LR,
            iterations: 2000,
            seed: 0,
            cone: false,
            cone_apex_above: 6.0,
            cone_half_angle: 40.0,
            cone_near_radius: 8.0,
            outside_cone_mode: OutsideConeMode::Gamma,
            mu_att: 0.05,
            speckle_scale: 1.0,
            inclusions: true,
            dataset_size: 64,
            dataset: None,
            out: PathBuf::from("out"),
            timesteps: Vec::new(),
            frames: 6,
            input: None,
            n_samples: 8,
            snapshots: false,
            checkpoint: None,
            eval_a: None,
            eval_b: None,
            features_a: None,
            features_b: None,
            verify_samples: 100_000,
            verify_corrupt_posterior_mean: false,
        }
    }
}

/// Every accepted key, in manifest order.
pub const KEYS: &[&str] = &[
    "T",
    "eps_b",
    "gamma_kind",
    "alpha_kind",
    "height",
    "width",
    "hidden",
    "batch_size",
    "lr",
    "iterations",
    "seed",
    "cone",
    "cone_apex_above",
    "cone_half_angle",
    "cone_near_radius",
    "outside_cone_mode",
    "mu_att",
    "speckle_scale",
    "inclusions",
    "dataset_size",
    "dataset",
    "out",
    "timesteps",
    "frames",
    "input",
    "n_samples",
    "snapshots",
    "checkpoint",
    "eval_a",
    "eval_b",
    "features_a",
    "features_b",
    "verify_samples",
    "verify_corrupt_posterior_mean",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => bail!("{key}: expected true or false, got {value:?}"),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

pub fn gamma_kind_name(k: GammaKind) -> &'static str {
    match k {
        GammaKind::SquareRoot => "square-root",
        GammaKind::Linear => "linear",
    }
}

pub fn alpha_kind_name(k: AlphaKind) -> &'static str {
    match k {
        AlphaKind::Cosine => "cosine",
        AlphaKind::Linear => "linear",
    }
}

pub fn outside_mode_name(m: OutsideConeMode) -> &'static str {
    match m {
        OutsideConeMode::Gamma => "gamma",
        OutsideConeMode::One => "one",
        OutsideConeMode::RowValue => "row-value",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "T" => self.steps = parse(key, v)?,
            "eps_b" => self.eps_b = parse(key, v)?,
            "gamma_kind" => {
                self.gamma_kind = match v {
                    "square-root" => GammaKind::SquareRoot,
                    "linear" => GammaKind::Linear,
                    _ => bail!("gamma_kind: expected square-root or linear, got {v:?}"),
                }
            }
            "alpha_kind" => {
                self.alpha_kind = match v {
                    "cosine" => AlphaKind::Cosine,
                    "linear" => AlphaKind::Linear,
                    _ => bail!("alpha_kind: expected cosine or linear, got {v:?}"),
                }
            }
            "height" => self.height = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "iterations" => self.iterations = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "cone" => self.cone = parse_bool(key, v)?,
            "cone_apex_above" => self.cone_apex_above = parse(key, v)?,
            "cone_half_angle" => self.cone_half_angle = parse(key, v)?,
            "cone_near_radius" => self.cone_near_radius = parse(key, v)?,
            "outside_cone_mode" => {
                self.outside_cone_mode = match v {
                    "gamma" => OutsideConeMode::Gamma,
                    "one" => OutsideConeMode::One,
                    "row-value" => OutsideConeMode::RowValue,
                    _ => bail!("outside_cone_mode: expected gamma, one or row-value, got {v:?}"),
                }
            }
            "mu_att" => self.mu_att = parse(key, v)?,
            "speckle_scale" => self.speckle_scale = parse(key, v)?,
            "inclusions" => self.inclusions = parse_bool(key, v)?,
            "dataset_size" => self.dataset_size = parse(key, v)?,
            "dataset" => self.dataset = parse_path(v),
            "out" => {
                ensure!(!v.is_empty(), "out: output directory must not be empty");
                self.out = PathBuf::from(v);
            }
            "timesteps" => {
                self.timesteps = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "frames" => self.frames = parse(key, v)?,
            "input" => self.input = parse_path(v),
            "n_samples" => self.n_samples = parse(key, v)?,
            "snapshots" => self.snapshots = parse_bool(key, v)?,
            "checkpoint" => self.checkpoint = parse_path(v),
            "eval_a" => self.eval_a = parse_path(v),
            "eval_b" => self.eval_b = parse_path(v),
            "features_a" => self.features_a = parse_path(v),
            "features_b" => self.features_b = parse_path(v),
            "verify_samples" => self.verify_samples = parse(key, v)?,
            "verify_corrupt_posterior_mean" => {
                self.verify_corrupt_posterior_mean = parse_bool(key, v)?
            }
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// `(key, value)` for every key, formatted so that [`RunConfig::set`]
    /// reads back the identical value.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let timesteps = self
            .timesteps
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let values = [
            self.steps.to_string(),
            self.eps_b.to_string(),
            gamma_kind_name(self.gamma_kind).into(),
            alpha_kind_name(self.alpha_kind).into(),
            self.height.to_string(),
            self.width.to_string(),
            self.hidden.to_string(),
            self.batch_size.to_string(),
            self.lr.to_string(),
            self.iterations.to_string(),
            self.seed.to_string(),
            self.cone.to_string(),
            self.cone_apex_above.to_string(),
            self.cone_half_angle.to_string(),
            self.cone_near_radius.to_string(),
            outside_mode_name(self.outside_cone_mode).into(),
            self.mu_att.to_string(),
            self.speckle_scale.to_string(),
            self.inclusions.to_string(),
            self.dataset_size.to_string(),
            show_path(&self.dataset),
            self.out.display().to_string(),
            timesteps,
            self.frames.to_string(),
            show_path(&self.input),
            self.n_samples.to_string(),
            self.snapshots.to_string(),
            show_path(&self.checkpoint),
            show_path(&self.eval_a),
            show_path(&self.eval_b),
            show_path(&self.features_a),
            show_path(&self.features_b),
            self.verify_samples.to_string(),
            self.verify_corrupt_posterior_mean.to_string(),
        ];
        KEYS.iter().copied().zip(values).collect()
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key = value", n + 1))?;
            let key = key.trim();
            if key.starts_with("manifest.") {
                continue;
            }
            ensure!(
                seen.insert(key.to_string()),
                "line {}: duplicate key {key:?}",
                n + 1
            );
            self.set(key, value)
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_text(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.steps >= 1, "T must be >= 1");
        ensure!(
            self.eps_b > 0.0 && self.eps_b < 1.0,
            "eps_b must lie in (0, 1), got {}",
            self.eps_b
        );
        ensure!(
            self.height >= 1 && self.width >= 1,
            "height and width must be >= 1"
        );
        ensure!(self.hidden >= 1, "hidden must be >= 1");
        ensure!(self.batch_size >= 1, "batch_size must be >= 1");
        ensure!(
            self.lr > 0.0 && self.lr.is_finite(),
            "lr must be positive, got {}",
            self.lr
        );
        ensure!(
            self.mu_att >= 0.0 && self.mu_att.is_finite(),
            "mu_att must be >= 0"
        );
        ensure!(
            (0.0..=1.0).contains(&self.speckle_scale),
            "speckle_scale must lie in [0, 1]"
        );
        ensure!(self.dataset_size >= 1, "dataset_size must be >= 1");
        ensure!(self.frames >= 1, "frames must be >= 1");
        ensure!(self.verify_samples >= 2, "verify_samples must be >= 2");
        if let Some(&t) = self.timesteps.iter().find(|&&t| t > self.steps) {
            bail!("timestep {t} exceeds T = {}", self.steps);
        }
        if self.cone {
            ensure!(
                self.cone_half_angle > 0.0 && self.cone_half_angle <= 90.0,
                "cone_half_angle must lie in (0, 90]"
            );
            ensure!(
                self.cone_near_radius >= 0.0,
                "cone_near_radius must be >= 0"
            );
            self.bmap_spec().validate()?;
        }
        Ok(())
    }

    pub fn cone_geometry(&self) -> Option<Cone> {
        self.cone.then(|| {
            Cone::centered(
                self.width,
                self.cone_apex_above,
                self.cone_half_angle,
                self.cone_near_radius,
            )
        })
    }

    pub fn bmap_spec(&self) -> BMapSpec {
        let mut spec = BMapSpec::new(self.height, self.width, self.eps_b);
        spec.gamma_kind = self.gamma_kind;
        spec.cone = self.cone_geometry();
        spec.outside_cone_mode = self.outside_cone_mode;
        spec
    }

    pub fn schedule(&self) -> Result<ScheduleTable> {
        Ok(alpha_schedule(self.alpha_kind, self.steps)?)
    }

    pub fn phantom_spec(&self) -> PhantomSpec {
        let mut spec = if self.inclusions {
            PhantomSpec::desk(self.height, self.width)
        } else {
            PhantomSpec::new(self.height, self.width, self.mu_att)
        };
        spec.mu_att = self.mu_att;
        spec.speckle_scale = self.speckle_scale;
        spec.cone = self.cone_geometry();
        spec
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            alpha_kind: self.alpha_kind,
            steps: self.steps,
            bmap: self.bmap_spec(),
            hidden: self.hidden,
            batch_size: self.batch_size,
            iterations: self.iterations,
            lr: self.lr,
            seed: self.seed,
        }
    }

    /// Serialized form, one `key = value` per line.
    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn keys_and_pairs_align() {
        let cfg = RunConfig::default();
        let mut probe = RunConfig::default();
        for (k, v) in cfg.pairs() {
            probe.set(k, &v).unwrap();
        }
        assert_eq!(probe, cfg);
        assert_eq!(cfg.pairs().len(), KEYS.len());
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        assert!(RunConfig::from_text("bogus = 1").is_err());
        assert!(RunConfig::from_text("T = 10\nT = 20").is_err());
        assert!(RunConfig::from_text("T 10").is_err());
    }

    #[test]
    fn comments_blank_lines_and_manifest_keys() {
        let cfg = RunConfig::from_text("# header\n\nT = 50   # steps\nmanifest.command = train\n")
            .unwrap();
        assert_eq!(cfg.steps, 50);
    }

    #[test]
    fn range_checks() {
        for bad in [
            "eps_b = 0",
            "eps_b = 1",
            "T = 0",
            "lr = -1",
            "speckle_scale = 2",
            "gamma_kind = cubic",
            "cone = yes",
            "timesteps = 0,500",
            "mu_att = -0.1",
        ] {
            assert!(RunConfig::from_text(bad).is_err(), "{bad}");
        }
    }
}
