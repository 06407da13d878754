//! Run directory: atomic artifact writes and the content-hash manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use topicmine::Error;

use crate::config::RunConfig;
use crate::CliError;

pub const CONFIG_FILE: &str = "run_config.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    /// File name → sha256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

pub struct RunDir {
    root: PathBuf,
    manifest: Manifest,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::io(path, e))
}

/// Writes to a sibling temp file, then renames over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunDir {
    pub fn open(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        let mpath = root.join(MANIFEST_FILE);
        let manifest = match fs::read_to_string(&mpath) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| Error::parse(mpath.display().to_string(), e.line(), e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Manifest::default(),
            Err(e) => return Err(io_err(&mpath, e)),
        };
        Ok(RunDir { root: root.to_path_buf(), manifest })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes an artifact and records its hash.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        write_atomic(&self.path(name), contents.as_bytes())?;
        self.manifest.artifacts.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        self.save_manifest()
    }

    pub fn write_config(&self, cfg: &RunConfig) -> Result<(), CliError> {
        write_atomic(&self.path(CONFIG_FILE), cfg.to_json().as_bytes())
    }

    /// Reads a handoff file produced by an earlier stage.
    pub fn read(&self, name: &str, produced_by: &str) -> Result<String, CliError> {
        read_required(&self.path(name), produced_by)
    }

    fn save_manifest(&self) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        write_atomic(&self.path(MANIFEST_FILE), text.as_bytes())
    }
}

pub fn read_required(path: &Path, produced_by: &str) -> Result<String, CliError> {
    match fs::read(path) {
        Ok(bytes) => Ok(topicmine::corpus::decode_utf8(&bytes, &path.display().to_string())?.to_string()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::Usage(format!(
            "missing {}; run `topicmine {produced_by}` first",
            path.display()
        ))),
        Err(e) => Err(io_err(path, e)),
    }
}
