//! Run manifests: one `manifest.json` per output directory recording what
//! produced it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Resolved configuration of the command.
    pub config: serde_json::Value,
    /// Input name to SHA-256 (dataset fingerprints, checkpoint files).
    pub inputs: BTreeMap<String, String>,
    pub tool_version: String,
    /// UTC, RFC 3339. Excluded from `content_hash`.
    pub timestamp: String,
    /// Output path relative to the run directory, to SHA-256.
    pub outputs: BTreeMap<String, String>,
    /// SHA-256 of every other field except `timestamp`.
    pub content_hash: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        let timestamp = time::OffsetDateTime::now_utc()
            .replace_nanosecond(0)
            .ok()
            .and_then(|t| t.format(&time::format_description::well_known::Rfc3339).ok())
            .unwrap_or_default();
        RunManifest {
            command: command.to_string(),
            config,
            inputs: BTreeMap::new(),
            tool_version: format!("one2one {}", env!("CARGO_PKG_VERSION")),
            timestamp,
            outputs: BTreeMap::new(),
            content_hash: String::new(),
        }
    }

    pub fn input(&mut self, name: impl Into<String>, hash: impl Into<String>) -> &mut Self {
        self.inputs.insert(name.into(), hash.into());
        self
    }

    /// Hash every file under `root` except the manifest itself.
    pub fn record_outputs(&mut self, root: &Path) -> Result<()> {
        self.outputs.clear();
        for path in files_under(root)? {
            let rel = relative(root, &path);
            if rel == MANIFEST_FILE {
                continue;
            }
            self.outputs.insert(rel, sha256_file(&path)?);
        }
        Ok(())
    }

    pub fn compute_hash(&self) -> String {
        let body = serde_json::json!({
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "tool_version": self.tool_version,
            "outputs": self.outputs,
        });
        sha256_hex(body.to_string().as_bytes())
    }

    /// Record outputs, seal the hash and write `<root>/manifest.json`.
    pub fn finish(mut self, root: &Path) -> Result<Self> {
        self.record_outputs(root)?;
        self.content_hash = self.compute_hash();
        let path = root.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&self)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(self)
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let s = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Regular files under `root`, sorted by path.
fn files_under(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.is_file() {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Identity of a dataset directory: the content hash of its manifest when it
/// has one, otherwise a hash over the relative paths and bytes of its PNGs.
pub fn dataset_hash(root: &Path) -> Result<String> {
    if root.join(MANIFEST_FILE).is_file() {
        return Ok(RunManifest::read(root)?.content_hash);
    }
    let mut h = Sha256::new();
    for path in files_under(root)? {
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            h.update(relative(root, &path).as_bytes());
            h.update([0]);
            h.update(sha256_file(&path)?.as_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}
