//! Run manifests: what ran, with which configuration, seeds and inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// Every configuration key with its resolved value.
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub commit: String,
    pub wall_time_secs: f64,
    pub rng: String,
    /// SHA-256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn save(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Data(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Hashes `path`, or each graph CSV inside it when it is a directory.
pub fn hash_input(path: &Path, into: &mut BTreeMap<String, String>) -> Result<(), CliError> {
    if path.is_dir() {
        for name in ["nodes.csv", "edges.csv", "labels.csv"] {
            let file = path.join(name);
            into.insert(file.display().to_string(), sha256_file(&file)?);
        }
    } else {
        into.insert(path.display().to_string(), sha256_file(path)?);
    }
    Ok(())
}

/// Fails if any recorded input no longer has its recorded hash.
pub fn verify_inputs(inputs: &BTreeMap<String, String>) -> Result<(), CliError> {
    for (path, hash) in inputs {
        let now = sha256_file(Path::new(path))?;
        if &now != hash {
            return Err(CliError::Data(format!(
                "input {path} changed since the manifest was written"
            )));
        }
    }
    Ok(())
}

/// Commit of the repository holding the executable, or `unknown`.
pub fn commit_id() -> String {
    let dir = std::env::current_exe()
        .ok()
        .and_then(|p| p.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}
