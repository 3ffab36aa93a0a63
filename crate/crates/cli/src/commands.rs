//! The six subcommands. Each takes a resolved [`RunConfig`], writes into
//! `config.out`, and finishes by writing a manifest there.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use usdiff_core::denoiser::{train_with_progress, DenoiserParams};
use usdiff_core::diffusion::{ancestral_sample_observed, forward_closed};
use usdiff_core::metrics::{feature_embed, frechet_distance, psnr, ssim, FeatureStats};
use usdiff_core::phantom::{phantom_dataset, phantom_member};
use usdiff_core::schedule::build_bmap_stack;
use usdiff_core::verify::{run_all, VerifyConfig, VerifyReport};
use usdiff_core::{gaussian_field, ImageGrid, RngStream};

use crate::config::RunConfig;
use crate::io;
use crate::manifest::{EmittedFile, Manifest};
use crate::pgm;
use crate::tensorfile::TensorFile;

/// Stream labels under the run seed. Training itself owns paths `[0]` and
/// `[1, i]`.
const DATA_STREAM: u64 = 0x4441_5441;
const FORWARD_STREAM: u64 = 0x4657_4452;
const SAMPLE_STREAM: u64 = 0x534d_504c;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: PathBuf,
    pub files: Vec<EmittedFile>,
    /// Human-readable summary for stdout.
    pub summary: String,
    /// False when the command ran but its result is a failure (verify).
    pub success: bool,
}

fn prepare_out(config: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&config.out)
        .with_context(|| format!("cannot create output directory {}", config.out.display()))?;
    Ok(&config.out)
}

fn finish(manifest: Manifest, summary: String, success: bool) -> Result<Outcome> {
    let path = manifest.write(&manifest.config.out)?;
    Ok(Outcome {
        manifest: path,
        files: manifest.files,
        summary,
        success,
    })
}

/// Seed for procedural phantoms, kept apart from the training streams.
pub fn data_seed(seed: u64) -> u64 {
    RngStream::new(seed, &[DATA_STREAM]).next_u64()
}

/// Up to `n` distinct timesteps, log-spaced from 1 to `steps`.
pub fn log_spaced(steps: usize, n: usize) -> Vec<usize> {
    if n <= 1 {
        return vec![steps];
    }
    let top = (steps as f64).ln();
    let mut out: Vec<usize> = (0..n)
        .map(|k| {
            let t = (top * k as f64 / (n - 1) as f64).exp().round() as usize;
            t.clamp(1, steps)
        })
        .collect();
    out.dedup();
    out
}

fn default_bmap_steps(steps: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (0..=4).map(|k| k * steps / 4).collect();
    ts.dedup();
    ts
}

pub fn cmd_bmaps(config: &RunConfig) -> Result<Outcome> {
    let out = prepare_out(config)?;
    let sched = config.schedule()?;
    let stack = build_bmap_stack(&sched, &config.bmap_spec())?;
    let timesteps = if config.timesteps.is_empty() {
        default_bmap_steps(config.steps)
    } else {
        config.timesteps.clone()
    };
    if let Some(&t) = timesteps.iter().find(|&&t| t > config.steps) {
        bail!("timestep {t} is outside 0..={}", config.steps);
    }
    // display ranges: per-step maps never drop below 1 - eps_b, cumulative
    // maps never below their value at T
    let step_floor = 1.0 - config.eps_b;
    let bar_floor = stack.bmap_bar(config.steps).min();
    let mut manifest = Manifest::new("bmaps", config);
    let dims = format!("{}x{}", config.height, config.width);
    for &t in &timesteps {
        for (prefix, grid, floor) in [
            ("bmap", stack.bmap(t), step_floor),
            ("bmap_bar", stack.bmap_bar(t), bar_floor),
        ] {
            let name = format!("{prefix}_t{t:04}");
            pgm::write(&out.join(format!("{name}.pgm")), grid, floor, 1.0)?;
            TensorFile::from_grid(grid)?.write(&out.join(format!("{name}.usdf")))?;
            manifest.add(format!("{name}.pgm"), dims.clone());
            manifest.add(format!("{name}.usdf"), dims.clone());
        }
    }
    let summary = format!(
        "wrote B-maps at t = {timesteps:?} (display floors {step_floor} and {bar_floor:e})"
    );
    finish(manifest, summary, true)
}

pub fn cmd_forward(config: &RunConfig) -> Result<Outcome> {
    let input = match &config.input {
        Some(path) => io::load_signed(path)?,
        None => {
            let mut spec = config.phantom_spec();
            spec.height = config.height;
            spec.width = config.width;
            phantom_member(&spec, data_seed(config.seed), 0)?
        }
    };
    let mut cfg = config.clone();
    (cfg.height, cfg.width) = input.shape();
    cfg.validate()?;
    let out = prepare_out(&cfg)?;
    let sched = cfg.schedule()?;
    let stack = build_bmap_stack(&sched, &cfg.bmap_spec())?;
    let timesteps = log_spaced(cfg.steps, cfg.frames);

    let mut manifest = Manifest::new("forward", &cfg);
    let root = RngStream::new(cfg.seed, &[FORWARD_STREAM]);
    let dims = format!("{}x{}", cfg.height, cfg.width);
    TensorFile::from_grid(&input)?.write(&out.join("forward_input.usdf"))?;
    manifest.add("forward_input.usdf", dims.clone());
    let mut panels = vec![input.clone()];
    for &t in &timesteps {
        let x_t = forward_closed(&input, t, &sched, &stack, &mut root.substream(t as u64))?.x_t;
        let name = format!("forward_t{t:04}.usdf");
        TensorFile::from_grid(&x_t)?.write(&out.join(&name))?;
        manifest.add(name, dims.clone());
        panels.push(x_t);
    }
    let sheet = contact_sheet(&panels)?;
    pgm::write_signed(&out.join("forward_sheet.pgm"), &sheet)?;
    manifest.add(
        "forward_sheet.pgm",
        format!("{}x{}", sheet.height(), sheet.width()),
    );
    let summary = format!("noised input at t = {timesteps:?}");
    finish(manifest, summary, true)
}

/// Panels side by side, separated by one white column.
pub fn contact_sheet(panels: &[ImageGrid]) -> Result<ImageGrid> {
    ensure!(!panels.is_empty(), "contact sheet needs at least one panel");
    let (h, w) = panels[0].shape();
    for p in panels {
        p.ensure_shape(h, w)?;
    }
    let total = panels.len() * (w + 1) - 1;
    Ok(ImageGrid::from_fn(h, total, |r, c| {
        let (k, x) = (c / (w + 1), c % (w + 1));
        if x == w {
            1.0
        } else {
            panels[k].get(r, x)
        }
    })?)
}

/// Training images: the configured dataset directory, or procedural
/// phantoms.
pub fn training_data(config: &RunConfig) -> Result<Vec<ImageGrid>> {
    match &config.dataset {
        Some(dir) => {
            let data = io::load_dataset(dir)?;
            for (i, img) in data.iter().enumerate() {
                ensure!(
                    img.shape() == (config.height, config.width),
                    "dataset image {i} is {:?}, config expects {}x{}",
                    img.shape(),
                    config.height,
                    config.width
                );
            }
            Ok(data)
        }
        None => Ok(phantom_dataset(
            config.dataset_size,
            &config.phantom_spec(),
            data_seed(config.seed),
        )?),
    }
}

/// Iterations between progress reports for `train`.
pub fn progress_interval(iterations: usize) -> usize {
    (iterations / 10).max(1)
}

pub fn cmd_train(config: &RunConfig, mut progress: impl FnMut(usize, f64)) -> Result<Outcome> {
    let data = training_data(config)?;
    let out = prepare_out(config)?;
    let trained = train_with_progress(&config.train_config(), &data, &mut progress)?;

    let mut manifest = Manifest::new("train", config);
    let mut csv = String::from("iter,loss\n");
    for (i, l) in trained.losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    fs::write(out.join("loss.csv"), csv)?;
    manifest.add("loss.csv", format!("{}x2", trained.losses.len()));
    for f in io::save_checkpoint(&out.join("checkpoint"), &trained.params)? {
        manifest.add(format!("checkpoint/{}", f.name), f.dims);
    }
    let summary = match trained.losses.last() {
        Some(l) => format!(
            "trained {} iterations on {} images, final loss {l}",
            trained.losses.len(),
            data.len()
        ),
        None => format!(
            "0 iterations: wrote initial weights ({} images)",
            data.len()
        ),
    };
    finish(manifest, summary, true)
}

fn check_checkpoint(config: &RunConfig, params: &DenoiserParams) -> Result<()> {
    if (params.height(), params.width(), params.steps())
        != (config.height, config.width, config.steps)
    {
        bail!(
            "checkpoint is {}x{} with T = {}, config asks for {}x{} with T = {}",
            params.height(),
            params.width(),
            params.steps(),
            config.height,
            config.width,
            config.steps
        );
    }
    Ok(())
}

pub fn cmd_sample(config: &RunConfig) -> Result<Outcome> {
    let dir = config
        .checkpoint
        .as_ref()
        .context("sample needs a checkpoint directory (config key `checkpoint`)")?;
    let params = io::load_checkpoint(dir)?;
    check_checkpoint(config, &params)?;
    let out = prepare_out(config)?;
    let sched = config.schedule()?;
    let stack = build_bmap_stack(&sched, &config.bmap_spec())?;
    let snapshot_steps = if config.snapshots {
        log_spaced(config.steps, config.frames)
    } else {
        Vec::new()
    };

    let mut manifest = Manifest::new("sample", config);
    for i in 0..config.n_samples {
        let rng = RngStream::new(config.seed, &[SAMPLE_STREAM, i as u64]);
        let mut snapshots = Vec::new();
        if snapshot_steps.contains(&config.steps) {
            // the sampler draws x_T from substream 0 and never reports it
            let x_top = gaussian_field(&mut rng.substream(0), config.height, config.width)?;
            snapshots.push((config.steps, x_top));
        }
        let x = ancestral_sample_observed(
            &params,
            &sched,
            &stack,
            &rng,
            (config.height, config.width),
            |t, x| {
                if snapshot_steps.contains(&t) {
                    snapshots.push((t, x.clone()));
                }
            },
        )?;
        for f in io::save_signed(out, &format!("sample_{i:03}"), &x)? {
            manifest.files.push(f);
        }
        if !snapshots.is_empty() {
            let snap_dir = out.join("snapshots");
            fs::create_dir_all(&snap_dir)?;
            for (t, x) in snapshots {
                let name = format!("sample_{i:03}_t{t:04}");
                for f in io::save_signed(&snap_dir, &name, &x)? {
                    manifest.add(format!("snapshots/{}", f.name), f.dims);
                }
            }
        }
    }
    let summary = format!("drew {} samples", config.n_samples);
    finish(manifest, summary, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1`), 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self {
            count: values.len(),
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// One image per file stem. When both `x.pgm` and `x.usdf` exist (as `sample`
/// writes them) the lossless `.usdf` wins.
pub fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out: BTreeMap<String, PathBuf> = BTreeMap::new();
    for p in io::list_images(dir)? {
        let Some(stem) = p.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let is_usdf = p
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("usdf"));
        if is_usdf || !out.contains_key(stem) {
            out.insert(stem.to_string(), p);
        }
    }
    Ok(out)
}

fn external_stats(path: &Path, images: usize) -> Result<FeatureStats> {
    let t = TensorFile::read(path)?;
    ensure!(
        t.dims.len() == 2,
        "{}: feature file must be (n_images, dim), got dims {:?}",
        path.display(),
        t.dims
    );
    let (n, dim) = (t.dims[0] as usize, t.dims[1] as usize);
    ensure!(
        n == images,
        "{}: {n} feature rows for {images} images",
        path.display()
    );
    let data = t.to_f64();
    let rows: Vec<Vec<f64>> = data.chunks(dim.max(1)).map(|c| c.to_vec()).collect();
    Ok(FeatureStats::from_vectors(&rows)?)
}

pub const EVAL_REPORT: &str = "eval_report.txt";

pub fn cmd_eval(config: &RunConfig) -> Result<Outcome> {
    let dir_a = config
        .eval_a
        .as_ref()
        .context("eval needs two directories")?;
    let dir_b = config
        .eval_b
        .as_ref()
        .context("eval needs two directories")?;
    let by_a = images_by_stem(dir_a)?;
    let by_b = images_by_stem(dir_b)?;
    ensure!(!by_a.is_empty(), "no images in {}", dir_a.display());
    ensure!(!by_b.is_empty(), "no images in {}", dir_b.display());
    let out = prepare_out(config)?;

    let load = |m: &BTreeMap<String, PathBuf>| {
        m.iter()
            .map(|(stem, p)| Ok((stem.clone(), io::load_unit(p)?)))
            .collect::<Result<BTreeMap<_, _>>>()
    };
    let (images_a, images_b) = (load(&by_a)?, load(&by_b)?);

    let mut report = String::from("# usdiff eval report\n");
    report.push_str(&format!(
        "images_a = {}\nimages_b = {}\n",
        images_a.len(),
        images_b.len()
    ));

    let shared: Vec<&String> = images_a
        .keys()
        .filter(|k| images_b.contains_key(*k))
        .collect();
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    for stem in &shared {
        let (a, b) = (&images_a[*stem], &images_b[*stem]);
        psnrs.push(psnr(a, b, 1.0).with_context(|| format!("psnr for {stem}"))?);
        ssims.push(ssim(a, b).with_context(|| format!("ssim for {stem}"))?);
    }
    report.push_str(&format!("paired = {}\n", shared.len()));
    for (name, values) in [("psnr", &psnrs), ("ssim", &ssims)] {
        if let Some(s) = Summary::of(values) {
            report.push_str(&format!(
                "{name}.mean = {}\n{name}.std = {}\n{name}.min = {}\n{name}.max = {}\n",
                s.mean, s.std, s.min, s.max
            ));
        }
    }
    let paired_error = shared
        .is_empty()
        .then(|| "no file names shared between the two directories".to_string());
    if let Some(e) = &paired_error {
        report.push_str(&format!("paired.error = {e}\n"));
    }

    let all_a: Vec<ImageGrid> = images_a.into_values().collect();
    let all_b: Vec<ImageGrid> = images_b.into_values().collect();
    let fd = frechet_distance(&feature_embed(&all_a)?, &feature_embed(&all_b)?)?;
    report.push_str(&format!("frechet.pixel_stat = {fd}\n"));
    match (&config.features_a, &config.features_b) {
        (Some(fa), Some(fb)) => {
            let d = frechet_distance(
                &external_stats(fa, all_a.len())?,
                &external_stats(fb, all_b.len())?,
            )?;
            report.push_str(&format!("frechet.external = {d}\n"));
        }
        (None, None) => {}
        _ => bail!("external features need both features_a and features_b"),
    }

    fs::write(out.join(EVAL_REPORT), &report)?;
    let mut manifest = Manifest::new("eval", config);
    manifest.add(EVAL_REPORT, format!("{}", report.lines().count()));
    let outcome = finish(manifest, report, true)?;
    if let Some(e) = paired_error {
        bail!("paired metrics: {e} (Frechet distance written to {EVAL_REPORT})");
    }
    Ok(outcome)
}

pub const VERIFY_REPORT: &str = "verify_report.txt";

pub fn verify_config(config: &RunConfig) -> VerifyConfig {
    VerifyConfig {
        seed: config.seed,
        iterated_samples: config.verify_samples,
        corrupt_posterior_mean: config.verify_corrupt_posterior_mean,
        ..VerifyConfig::default()
    }
}

pub fn format_verify_report(report: &VerifyReport) -> String {
    let mut text = String::from("# usdiff verify report\n");
    for c in &report.checks {
        text.push_str(&format!(
            "{:<24} {} observed {:e} tolerance {:e}\n    {}\n",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.observed,
            c.tolerance,
            c.detail
        ));
    }
    text.push_str(&format!(
        "result {}\n",
        if report.all_passed() { "PASS" } else { "FAIL" }
    ));
    text
}

pub fn cmd_verify(config: &RunConfig) -> Result<Outcome> {
    let out = prepare_out(config)?;
    let report = run_all(&verify_config(config))?;
    let text = format_verify_report(&report);
    fs::write(out.join(VERIFY_REPORT), &text)?;
    let mut manifest = Manifest::new("verify", config);
    manifest.add(VERIFY_REPORT, format!("{}", report.checks.len()));
    finish(manifest, text, report.all_passed())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_spacing() {
        assert_eq!(log_spaced(200, 1), vec![200]);
        let ts = log_spaced(200, 6);
        assert_eq!(ts.first(), Some(&1));
        assert_eq!(ts.last(), Some(&200));
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(log_spaced(3, 10), vec![1, 2, 3]);
    }

    #[test]
    fn summary_stats() {
        let s = Summary::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(
            (s.mean, s.std, s.min, s.max, s.count),
            (2.0, 1.0, 1.0, 3.0, 3)
        );
        assert_eq!(Summary::of(&[5.0]).unwrap().std, 0.0);
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn sheet_layout() {
        let a = usdiff_core::grid_fill(2, 3, -1.0).unwrap();
        let s = contact_sheet(&[a.clone(), a]).unwrap();
        assert_eq!(s.shape(), (2, 7));
        assert_eq!(s.get(0, 3), 1.0);
        assert_eq!(s.get(1, 6), -1.0);
    }
}
