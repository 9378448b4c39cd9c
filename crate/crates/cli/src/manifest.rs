//! The run manifest written next to every command's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name; passing them again repeats the run.
    pub argv: Vec<String>,
    /// Effective configuration after merging files, flags and defaults.
    pub config: serde_json::Value,
    pub version: String,
    pub seed: Option<u64>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<PathBuf>,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn start(command: &str, argv: Vec<String>, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            argv,
            config: serde_json::Value::Null,
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            started_unix: now(),
            finished_unix: 0.0,
            outputs: Vec::new(),
            inputs: BTreeMap::new(),
        }
    }

    pub fn config(&mut self, value: &impl Serialize) {
        self.config = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
    }

    /// Records the checksum of an input file.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sum = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), sum);
        Ok(())
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Writes the manifest into `dir`, or beside `file` as `<file>.manifest.json`.
    pub fn finish(mut self, location: ManifestLocation) -> Result<PathBuf> {
        self.finished_unix = now();
        let path = match location {
            ManifestLocation::Dir(dir) => dir.join(RUN_MANIFEST),
            ManifestLocation::Beside(file) => {
                let mut name = file.file_name().unwrap_or_default().to_os_string();
                name.push(".manifest.json");
                file.with_file_name(name)
            }
        };
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

pub enum ManifestLocation<'a> {
    Dir(&'a Path),
    Beside(&'a Path),
}
