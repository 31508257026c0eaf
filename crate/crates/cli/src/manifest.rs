use std::fs;
use std::path::{Path, PathBuf};

use brachx_core::NumericPolicy;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Value,
    pub numeric_policy: NumericPolicy,
    pub threads: usize,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputEntry>,
}

pub fn digest(path: &Path) -> Result<OutputEntry, CliError> {
    let data = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(OutputEntry {
        file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
        bytes: data.len() as u64,
        sha256: hex::encode(Sha256::digest(&data)),
    })
}

/// Makes `dir` ready for a run. Files listed by an earlier manifest are
/// removed; any other file is an error, so the new manifest will describe the
/// directory completely.
pub fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let manifest = dir.join(MANIFEST_NAME);
    let mut known = vec![MANIFEST_NAME.to_string()];
    if manifest.exists() {
        let text = fs::read_to_string(&manifest).map_err(|e| CliError::Io(format!("{}: {e}", manifest.display())))?;
        let old: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{} is not a brachx manifest: {e}", manifest.display())))?;
        known.extend(old.outputs.into_iter().map(|o| o.file));
    }
    let entries = fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut foreign = Vec::new();
    for e in entries {
        let e = e.map_err(|e| CliError::Io(e.to_string()))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if !known.contains(&name) {
            foreign.push(name);
        }
    }
    if !foreign.is_empty() {
        foreign.sort();
        return Err(CliError::Validation(format!(
            "output directory {} contains files from outside a brachx run: {}",
            dir.display(),
            foreign.join(", ")
        )));
    }
    for name in known {
        let p = dir.join(name);
        if p.is_file() {
            fs::remove_file(&p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        }
    }
    Ok(())
}

/// Writes the manifest through a temporary file and a rename, so a reader sees
/// either no manifest or a complete one.
pub fn write(dir: &Path, manifest: &RunManifest) -> Result<PathBuf, CliError> {
    let path = dir.join(MANIFEST_NAME);
    let tmp = dir.join(format!(".{MANIFEST_NAME}.tmp"));
    let text = serde_json::to_string_pretty(manifest).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(&tmp, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, &path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}
