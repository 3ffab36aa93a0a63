//! Run manifests: the resolved configuration plus every emitted file.
//!
//! A manifest is a config file with extra `manifest.*` keys, so
//! `usdiff <command> --config <out>/manifest.txt` repeats the run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::RunConfig;

pub const FILE_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFile {
    /// Path relative to the output directory.
    pub name: String,
    /// Shape such as `32x32`, or a row count for tables.
    pub dims: String,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub files: Vec<EmittedFile>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, dims: impl Into<String>) {
        self.files.push(EmittedFile {
            name: name.into(),
            dims: dims.into(),
        });
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# usdiff run manifest\n");
        out.push_str(&format!("manifest.command = {}\n", self.command));
        out.push_str(&format!(
            "manifest.version = {}\n",
            env!("CARGO_PKG_VERSION")
        ));
        out.push_str(&self.config.to_text());
        for (i, f) in self.files.iter().enumerate() {
            out.push_str(&format!("manifest.file.{i:04} = {}\n", f.name));
            out.push_str(&format!("manifest.file.{i:04}.dims = {}\n", f.dims));
        }
        out
    }

    /// Writes `manifest.txt` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(FILE_NAME);
        fs::write(&path, self.to_text()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Emitted files listed in a manifest, in order.
pub fn read_files(path: &Path) -> Result<Vec<EmittedFile>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut files: Vec<EmittedFile> = Vec::new();
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim().to_string());
        let Some(rest) = key.strip_prefix("manifest.file.") else {
            continue;
        };
        if rest.ends_with(".dims") {
            if let Some(last) = files.last_mut() {
                last.dims = value;
            }
        } else {
            files.push(EmittedFile {
                name: value,
                dims: String::new(),
            });
        }
    }
    Ok(files)
}
