//! "USDF" raw tensor container.
//!
//! ```text
//! b"USDF" | version: u8 = 1 | rank: u8 | dims: rank x u32 LE | payload: f32 LE, row-major
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use usdiff_core::ImageGrid;

pub const MAGIC: &[u8; 4] = b"USDF";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        ensure!(
            dims.len() <= u8::MAX as usize,
            "rank {} does not fit in one byte",
            dims.len()
        );
        let expected = element_count(&dims)?;
        ensure!(
            expected == data.len(),
            "dims {dims:?} need {expected} values, got {}",
            data.len()
        );
        Ok(Self { dims, data })
    }

    /// Rounds each value to `f32`.
    pub fn from_f64(dims: Vec<u32>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn from_grid(grid: &ImageGrid) -> Result<Self> {
        Self::from_f64(
            vec![dim_u32(grid.height())?, dim_u32(grid.width())?],
            grid.data(),
        )
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn to_grid(&self) -> Result<ImageGrid> {
        ensure!(
            self.dims.len() == 2,
            "expected a rank-2 tensor, got dims {:?}",
            self.dims
        );
        Ok(ImageGrid::new(
            self.dims[0] as usize,
            self.dims[1] as usize,
            self.to_f64(),
        )?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        ensure!(bytes.len() >= 6, "file too short for a tensor header");
        ensure!(&bytes[..4] == MAGIC, "bad magic bytes {:?}", &bytes[..4]);
        ensure!(
            bytes[4] == VERSION,
            "unsupported tensor file version {}",
            bytes[4]
        );
        let rank = bytes[5] as usize;
        let header = 6 + 4 * rank;
        ensure!(bytes.len() >= header, "truncated tensor header");
        let dims: Vec<u32> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let count = element_count(&dims)?;
        let payload = &bytes[header..];
        if payload.len() != count * 4 {
            bail!(
                "payload is {} bytes, dims {dims:?} need {}",
                payload.len(),
                count * 4
            );
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::decode(&bytes).with_context(|| format!("decoding {}", path.display()))
    }
}

fn element_count(dims: &[u32]) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d as usize)
            .context("tensor element count overflows")
    })
}

pub fn dim_u32(n: usize) -> Result<u32> {
    u32::try_from(n).with_context(|| format!("dimension {n} does not fit in u32"))
}

pub fn format_dims(dims: &[u32]) -> String {
    dims.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}
