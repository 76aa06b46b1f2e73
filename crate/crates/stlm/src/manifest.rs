use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::sha256_hex;
use crate::error::{IoContext, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: PathBuf,
    pub sha256: String,
}

/// Provenance record written next to the outputs of every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_digest: String,
    pub seed: u64,
    pub git_describe: String,
    pub output_dir: PathBuf,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub artifacts: Vec<Artifact>,
}

pub fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// `git describe` of the working directory, or `"unknown"` outside a repo.
pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

impl RunManifest {
    pub fn new(command: &str, args: &[String], config_digest: String, seed: u64, output_dir: &Path) -> Self {
        Self {
            command: command.into(),
            args: args.to_vec(),
            config_digest,
            seed,
            git_describe: git_describe(),
            output_dir: output_dir.to_path_buf(),
            started_unix_s: unix_now(),
            finished_unix_s: 0.0,
            artifacts: Vec::new(),
        }
    }

    /// Hashes `files`, stamps the finish time and writes `manifest.json`.
    pub fn finish(mut self, files: &[PathBuf]) -> Result<PathBuf> {
        for f in files {
            let bytes = std::fs::read(f).at(f)?;
            let rel = f.strip_prefix(&self.output_dir).unwrap_or(f).to_path_buf();
            self.artifacts.push(Artifact {
                path: rel,
                sha256: sha256_hex(&bytes),
            });
        }
        self.finished_unix_s = unix_now();
        let path = self.output_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(&path, text).at(&path)?;
        Ok(path)
    }
}
