//! Run manifests: everything needed to reproduce an output file.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub master_seed: Option<u64>,
    pub version: &'static str,
    pub threads: usize,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
    pub wall_time_secs: f64,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let k = file.read(&mut buf)?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Collects manifest fields over the course of a run.
pub struct ManifestBuilder {
    subcommand: String,
    started: Instant,
    started_at: String,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
}

impl ManifestBuilder {
    pub fn start(subcommand: &str) -> Self {
        ManifestBuilder {
            subcommand: subcommand.to_string(),
            started: Instant::now(),
            started_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn finish<C: Serialize>(
        self,
        config: &C,
        master_seed: Option<u64>,
        path: &Path,
    ) -> Result<PathBuf, CliError> {
        let manifest = RunManifest {
            subcommand: self.subcommand,
            args: std::env::args().collect(),
            config: serde_json::to_value(config).map_err(std::io::Error::other)?,
            master_seed,
            version: dhsic::VERSION,
            threads: rayon::current_num_threads(),
            inputs: self.inputs,
            outputs: self.outputs,
            started_at: self.started_at,
            finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        write_json(path, &manifest)?;
        Ok(path.to_path_buf())
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
