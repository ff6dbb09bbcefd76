//! Provenance record written by every subcommand. It holds no timestamps,
//! so reruns with the same inputs write identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chartforge_core::canonical;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

pub const TOOL: &str = "chartforge";
pub const FILE_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    pub seed: u64,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub config: PipelineConfig,
    /// Output path (relative to the manifest's directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], config: &PipelineConfig) -> Self {
        Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv: argv.to_vec(),
            seed: config.seed,
            config_hash: canonical::digest(config).expect("config serializes"),
            config: config.clone(),
            outputs: BTreeMap::new(),
        }
    }

    /// Hashes `paths`, recursing into directories. Keys are relative to
    /// `base` with `/` separators.
    pub fn record_outputs(&mut self, base: &Path, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            for file in files_under(p)? {
                if file.file_name().is_some_and(|n| n == FILE_NAME) {
                    continue;
                }
                let bytes = fs::read(&file).with_context(|| format!("hashing {}", file.display()))?;
                let rel = file.strip_prefix(base).unwrap_or(&file);
                let key = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                self.outputs.insert(key, canonical::sha256_hex(&bytes));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = canonical::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        canonical::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn files_under(p: &Path) -> Result<Vec<PathBuf>> {
    if p.is_file() {
        return Ok(vec![p.to_path_buf()]);
    }
    let mut out = Vec::new();
    if p.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(p)
            .with_context(|| format!("listing {}", p.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            out.extend(files_under(&e)?);
        }
    }
    Ok(out)
}
