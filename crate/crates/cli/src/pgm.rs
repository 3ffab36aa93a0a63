//! Binary greyscale PGM (P5) images, 8-bit.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use usdiff_core::ImageGrid;

/// Linear map of `[lo, hi]` onto `0..=255`, clamped and rounded to nearest.
/// A degenerate range (`hi <= lo`) maps everything to 255.
pub fn to_bytes(grid: &ImageGrid, lo: f64, hi: f64) -> Vec<u8> {
    grid.data()
        .iter()
        .map(|&v| {
            if hi <= lo {
                return 255;
            }
            let unit = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            (unit * 255.0).round() as u8
        })
        .collect()
}

pub fn encode(grid: &ImageGrid, lo: f64, hi: f64) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(to_bytes(grid, lo, hi));
    out
}

pub fn write(path: &Path, grid: &ImageGrid, lo: f64, hi: f64) -> Result<()> {
    fs::write(path, encode(grid, lo, hi)).with_context(|| format!("writing {}", path.display()))
}

/// Writes an image from the diffusion domain `[-1, 1]`.
pub fn write_signed(path: &Path, grid: &ImageGrid) -> Result<()> {
    write(path, grid, -1.0, 1.0)
}

fn skip_space_and_comments(bytes: &[u8], mut i: usize) -> usize {
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else {
            return i;
        }
    }
}

fn header_number(bytes: &[u8], i: &mut usize) -> Result<usize> {
    *i = skip_space_and_comments(bytes, *i);
    let start = *i;
    while *i < bytes.len() && bytes[*i].is_ascii_digit() {
        *i += 1;
    }
    ensure!(*i > start, "malformed PGM header");
    Ok(std::str::from_utf8(&bytes[start..*i])?.parse()?)
}

/// Decodes P5 with `maxval <= 65535` into `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<ImageGrid> {
    ensure!(bytes.starts_with(b"P5"), "not a binary PGM (P5) file");
    let mut i = 2;
    let width = header_number(bytes, &mut i)?;
    let height = header_number(bytes, &mut i)?;
    let maxval = header_number(bytes, &mut i)?;
    ensure!(
        (1..=65535).contains(&maxval),
        "PGM maxval {maxval} out of range"
    );
    ensure!(
        i < bytes.len() && bytes[i].is_ascii_whitespace(),
        "malformed PGM header"
    );
    let body = &bytes[i + 1..];
    let n = width * height;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    if body.len() < need {
        bail!("PGM payload has {} bytes, expected {need}", body.len());
    }
    let scale = maxval as f64;
    let data = if wide {
        body[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    } else {
        body[..n].iter().map(|&b| b as f64 / scale).collect()
    };
    Ok(ImageGrid::new(height, width, data)?)
}

pub fn read(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_eight_bits() {
        let g = ImageGrid::from_fn(3, 5, |r, c| (r * 5 + c) as f64 / 14.0).unwrap();
        let back = decode(&encode(&g, 0.0, 1.0)).unwrap();
        assert_eq!(back.shape(), (3, 5));
        for (a, b) in g.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn mapping_is_clamped_and_monotone() {
        let g = ImageGrid::new(1, 5, vec![-2.0, -1.0, 0.0, 1.0, 3.0]).unwrap();
        assert_eq!(to_bytes(&g, -1.0, 1.0), vec![0, 0, 128, 255, 255]);
        let flat = ImageGrid::new(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(to_bytes(&flat, 1.0, 1.0), vec![255, 255]);
    }

    #[test]
    fn header_comments_and_wide_samples() {
        let mut bytes = b"P5 # comment\n2 1\n# another\n1000\n".to_vec();
        bytes.extend_from_slice(&500u16.to_be_bytes());
        bytes.extend_from_slice(&1000u16.to_be_bytes());
        let g = decode(&bytes).unwrap();
        assert_eq!(g.data(), &[0.5, 1.0]);
        assert!(decode(b"P2\n1 1\n255\n0").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00").is_err());
    }
}
