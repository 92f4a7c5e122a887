use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one invocation: what ran, with which configuration, and the
/// checksum of every file in the output tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub stages: Vec<String>,
    pub config_sha256: String,
    pub seed: Option<u64>,
    /// `OK` or `FAILED`.
    pub status: String,
    pub failure: Option<String>,
    /// Relative path (with `/` separators) to SHA-256 hex digest.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn succeeded(&self) -> bool {
        self.status == "OK"
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|source| Error::File { path, source })
    }

    pub fn read(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| Error::File { path: path.clone(), source })?;
        serde_json::from_str(&text).map_err(|e| Error::Format { line: e.line(), message: e.to_string() })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Checksums of every regular file under `root` except the manifest itself.
pub fn checksum_tree(root: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    walk(root, "", &mut out)?;
    Ok(out)
}

fn walk(dir: &Path, prefix: &str, out: &mut BTreeMap<String, String>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|source| Error::File { path: dir.to_path_buf(), source })?;
    for entry in entries {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let rel = if prefix.is_empty() { name.clone() } else { format!("{prefix}/{name}") };
        let ty = entry.file_type()?;
        if ty.is_dir() {
            walk(&entry.path(), &rel, out)?;
        } else if ty.is_file() && rel != MANIFEST_FILE {
            out.insert(rel, file_sha256(&entry.path())?);
        }
    }
    Ok(())
}
