//! Run manifests: content digests of inputs and outputs plus the effective config.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{read_json, write_json};
use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn digest_file(path: &Path) -> Result<String> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    /// Path as given → sha256.
    pub inputs: BTreeMap<String, String>,
    /// Path relative to the manifest directory → sha256.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn record<C: Serialize>(
        command: &str,
        config: &C,
        inputs: &[PathBuf],
        out_dir: &Path,
        outputs: &[PathBuf],
    ) -> Result<RunManifest> {
        let mut m = RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        };
        for p in inputs {
            m.inputs.insert(p.display().to_string(), digest_file(p)?);
        }
        for p in outputs {
            let key = p.strip_prefix(out_dir).unwrap_or(p);
            m.outputs.insert(key.display().to_string(), digest_file(p)?);
        }
        Ok(m)
    }

    /// Writes `manifest.json` into `out_dir` and returns its path.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        read_json(path)
    }
}

/// Recomputes every output digest of the manifest at `path`.
/// Returns the number of files checked, or the first mismatch.
pub fn verify_manifest(path: &Path) -> Result<usize> {
    let m = RunManifest::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    for (rel, expected) in &m.outputs {
        let file = dir.join(rel);
        if !file.exists() || digest_file(&file)? != *expected {
            return Err(Error::DigestMismatch(file));
        }
    }
    Ok(m.outputs.len())
}
