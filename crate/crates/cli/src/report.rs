//! Output bookkeeping: hashed output files, the `run.json` record and
//! progress events.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};

use depthvision_core::io::{write_png, RawGrid};
use depthvision_core::simgen::MANIFEST_VERSION;
use depthvision_core::ImageRgb;
use depthvision_neural::nets::{DEPTH_ENCODING, RESIZE_METHOD};
use depthvision_neural::weights::FORMAT_VERSION;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, PipelineConfig};
use crate::error::{CliError, Result};

static JSON_LOGS: AtomicBool = AtomicBool::new(false);

pub fn set_json_logs(on: bool) {
    JSON_LOGS.store(on, Ordering::Relaxed);
}

/// Progress event: a JSON line on standard error with `--json-logs`,
/// otherwise an info log record.
pub fn event(name: &str, fields: serde_json::Value) {
    if JSON_LOGS.load(Ordering::Relaxed) {
        let mut obj = serde_json::Map::new();
        obj.insert("event".into(), name.into());
        if let serde_json::Value::Object(m) = fields {
            obj.extend(m);
        }
        eprintln!("{}", serde_json::Value::Object(obj));
    } else {
        log::info!("{name} {fields}");
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(bytes)))
}

/// Writes files under an output directory and records their digests.
pub struct Outputs {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hashes: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Records an already written file.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let digest = sha256_file(&self.path(name))?;
        self.hashes.insert(name.to_string(), digest);
        Ok(())
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        self.record(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("output serializes");
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    pub fn png(&mut self, name: &str, img: &ImageRgb) -> Result<()> {
        write_png(&self.path(name), img)?;
        self.record(name)
    }

    pub fn grid(&mut self, name: &str, grid: &RawGrid) -> Result<()> {
        grid.write(&self.path(name))?;
        self.record(name)
    }

    pub fn hashes(&self) -> &BTreeMap<String, String> {
        &self.hashes
    }

    /// Writes `run.json`; it carries no timestamps so identical runs give
    /// identical records.
    pub fn finish(self, command: &str, args: &[String], config: &PipelineConfig) -> Result<()> {
        let record = RunRecord {
            command: command.to_string(),
            args: args.to_vec(),
            config_hash: config.hash(),
            seed: config.seed,
            config: config.clone(),
            versions: Versions::current(),
            outputs: self.hashes.clone(),
        };
        let path = self.path("run.json");
        let mut text = serde_json::to_string_pretty(&record).expect("record serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Versions {
    pub tool: &'static str,
    pub weights_format: u32,
    pub dataset_manifest: u32,
    pub depth_encoding: &'static str,
    pub resize: &'static str,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            tool: env!("CARGO_PKG_VERSION"),
            weights_format: FORMAT_VERSION,
            dataset_manifest: MANIFEST_VERSION,
            depth_encoding: DEPTH_ENCODING,
            resize: RESIZE_METHOD,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    /// Arguments as given, paths unchanged.
    pub args: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub versions: Versions,
    /// SHA-256 of every file the command wrote.
    pub outputs: BTreeMap<String, String>,
}
