//! Image and checkpoint loading/saving on top of the PGM and tensor formats.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use usdiff_core::denoiser::{DenoiserParams, Tensor, TENSOR_NAMES};
use usdiff_core::ImageGrid;

use crate::manifest::{EmittedFile, FILE_NAME};
use crate::pgm;
use crate::tensorfile::{dim_u32, format_dims, TensorFile};

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

pub fn is_image_file(path: &Path) -> bool {
    matches!(extension(path).as_deref(), Some("pgm" | "usdf"))
}

/// Image files (`.pgm`, `.usdf`) in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && is_image_file(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads an image into the diffusion domain `[-1, 1]`. PGM grey levels map
/// `0..=maxval` onto `[-1, 1]`; tensor files are taken as already signed.
pub fn load_signed(path: &Path) -> Result<ImageGrid> {
    let img = match extension(path).as_deref() {
        Some("pgm") => pgm::read(path)?.to_signed_range(),
        Some("usdf") => TensorFile::read(path)?.to_grid()?,
        _ => bail!("{}: expected a .pgm or .usdf image", path.display()),
    };
    ensure!(
        img.data().iter().all(|v| v.abs() <= 1.0),
        "{}: values outside [-1, 1]",
        path.display()
    );
    Ok(img)
}

/// Loads an image into the metric domain `[0, 1]`.
pub fn load_unit(path: &Path) -> Result<ImageGrid> {
    match extension(path).as_deref() {
        Some("pgm") => pgm::read(path),
        Some("usdf") => Ok(TensorFile::read(path)?
            .to_grid()?
            .to_unit_range()
            .clamp(0.0, 1.0)),
        _ => bail!("{}: expected a .pgm or .usdf image", path.display()),
    }
}

pub fn load_dataset(dir: &Path) -> Result<Vec<ImageGrid>> {
    let files = list_images(dir)?;
    ensure!(
        !files.is_empty(),
        "no .pgm or .usdf images in {}",
        dir.display()
    );
    files.iter().map(|p| load_signed(p)).collect()
}

/// Writes `name.usdf` and `name.pgm` for a signed image.
pub fn save_signed(dir: &Path, name: &str, img: &ImageGrid) -> Result<Vec<EmittedFile>> {
    let dims = format!("{}x{}", img.height(), img.width());
    TensorFile::from_grid(img)?.write(&dir.join(format!("{name}.usdf")))?;
    pgm::write_signed(&dir.join(format!("{name}.pgm")), img)?;
    Ok(vec![
        EmittedFile {
            name: format!("{name}.usdf"),
            dims: dims.clone(),
        },
        EmittedFile {
            name: format!("{name}.pgm"),
            dims,
        },
    ])
}

/// Checkpoint directory: one tensor file per parameter plus `manifest.txt`
/// with the network geometry and tensor shapes.
pub fn save_checkpoint(dir: &Path, params: &DenoiserParams) -> Result<Vec<EmittedFile>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut text = String::from("# usdiff checkpoint\n");
    text.push_str(&format!("height = {}\n", params.height()));
    text.push_str(&format!("width = {}\n", params.width()));
    text.push_str(&format!("hidden = {}\n", params.hidden()));
    text.push_str(&format!("T = {}\n", params.steps()));
    let mut files = Vec::new();
    for t in params.tensors() {
        let dims = t
            .shape
            .iter()
            .map(|&d| dim_u32(d))
            .collect::<Result<Vec<_>>>()?;
        let name = format!("{}.usdf", t.name);
        TensorFile::from_f64(dims.clone(), &t.data)?.write(&dir.join(&name))?;
        text.push_str(&format!("tensor.{} = {}\n", t.name, format_dims(&dims)));
        files.push(EmittedFile {
            name,
            dims: format_dims(&dims),
        });
    }
    fs::write(dir.join(FILE_NAME), text)?;
    files.push(EmittedFile {
        name: FILE_NAME.into(),
        dims: format!("{}", params.tensors().len()),
    });
    Ok(files)
}

pub fn load_checkpoint(dir: &Path) -> Result<DenoiserParams> {
    let path = dir.join(FILE_NAME);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("reading checkpoint manifest {}", path.display()))?;
    let mut geometry = [None; 4];
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        let slot = match k.trim() {
            "height" => 0,
            "width" => 1,
            "hidden" => 2,
            "T" => 3,
            _ => continue,
        };
        geometry[slot] = Some(
            v.trim()
                .parse::<usize>()
                .with_context(|| format!("{}: bad value for {}", path.display(), k.trim()))?,
        );
    }
    let [Some(h), Some(w), Some(hidden), Some(steps)] = geometry else {
        bail!("{}: missing height/width/hidden/T", path.display());
    };
    let tensors = TENSOR_NAMES
        .iter()
        .map(|&name| {
            let file = TensorFile::read(&dir.join(format!("{name}.usdf")))?;
            Ok(Tensor {
                name,
                shape: file.dims.iter().map(|&d| d as usize).collect(),
                data: file.to_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DenoiserParams::from_tensors(h, w, hidden, steps, tensors)
        .with_context(|| format!("checkpoint {} has inconsistent tensors", dir.display()))
}
