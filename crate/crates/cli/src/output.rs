//! Output directories: overwrite protection, data digests and the per-run
//! manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

pub const RUN_MANIFEST: &str = "run_manifest.json";
pub const DIGESTS: &str = "digests.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let mut file = fs::File::open(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    digests: BTreeMap<String, String>,
}

impl OutDir {
    /// Creates `root` if needed. A non-empty directory is refused unless
    /// `force` is set.
    pub fn prepare(root: &Path, force: bool) -> Result<Self, Failure> {
        if root.exists() {
            if !root.is_dir() {
                return Err(Failure::input(format!(
                    "{} exists and is not a directory",
                    root.display()
                )));
            }
            let non_empty = fs::read_dir(root)
                .map_err(|e| Failure::input(format!("{}: {e}", root.display())))?
                .next()
                .is_some();
            if non_empty && !force {
                return Err(Failure::Overwrite(root.to_owned()));
            }
        } else {
            fs::create_dir_all(root).map_err(|e| Failure::internal(format!("creating {}: {e}", root.display())))?;
        }
        Ok(OutDir {
            root: root.to_owned(),
            digests: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes a data output and records its digest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        self.digests.insert(name.to_string(), sha256_hex(bytes));
        self.write_untracked(name, bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::internal(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn write_untracked(&self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| Failure::internal(format!("writing {}: {e}", path.display())))
    }

    /// Writes `digests.json` and the run manifest.
    pub fn finish(self, manifest: RunManifest) -> Result<PathBuf, Failure> {
        let mut digests = serde_json::to_vec_pretty(&self.digests).map_err(|e| Failure::internal(e.to_string()))?;
        digests.push(b'\n');
        self.write_untracked(DIGESTS, &digests)?;
        let manifest = RunManifest {
            outputs: self.digests.clone(),
            ..manifest
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::internal(e.to_string()))?;
        bytes.push(b'\n');
        self.write_untracked(RUN_MANIFEST, &bytes)?;
        Ok(self.root)
    }
}

/// Effective settings and provenance of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub workers: usize,
    pub settings: serde_json::Value,
    /// Input path -> sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new<S: Serialize>(command: &str, workers: usize, settings: &S) -> Self {
        RunManifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            workers,
            settings: serde_json::to_value(settings).unwrap_or(serde_json::Value::Null),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self, Failure> {
        if path.is_file() {
            self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        }
        Ok(self)
    }
}
