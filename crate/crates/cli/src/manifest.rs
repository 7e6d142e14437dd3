//! `run_manifest.json`: what ran, with which settings, on which inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{with_path, CliResult};

pub const FILE_NAME: &str = "run_manifest.json";

#[derive(Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = with_path(fs::read(path), path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn start(command: &str, config: &impl Serialize) -> CliResult<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::to_value(config)?,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            started_at: Utc::now(),
            finished_at: None,
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputDigest { path: path.to_path_buf(), sha256 });
        Ok(())
    }

    pub fn finish(mut self, dir: &Path) -> CliResult<()> {
        self.finished_at = Some(Utc::now());
        let path = dir.join(FILE_NAME);
        with_path(fs::write(&path, serde_json::to_string_pretty(&self)? + "\n"), &path)
    }
}
