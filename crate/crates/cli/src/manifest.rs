use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use cafv_core::Error;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliResult, Phase};

pub const RUN_MANIFEST: &str = "run.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Provenance of one invocation, written last.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub output_dir: String,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_file(path: &Path) -> cafv_core::Result<(u64, String)> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok((bytes.len() as u64, hex::encode(Sha256::digest(&bytes))))
}

/// Write through a sibling temp file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> cafv_core::Result<()> {
    let io = |source| Error::Io {
        path: path.into(),
        source,
    };
    let tmp = tmp_path(path);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Output directory plus a ledger of everything written to it.
pub struct Outputs {
    root: PathBuf,
    files: Vec<FileDigest>,
}

impl Outputs {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root)
            .map_err(|e| Error::Io {
                path: root.into(),
                source: e,
            })
            .failed()?;
        Ok(Self {
            root: root.into(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn dir(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.path(rel);
        fs::create_dir_all(&p)
            .map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })
            .failed()?;
        Ok(p)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.path(rel), bytes).failed()?;
        self.record(rel)
    }

    /// Let `f` write to a temp path, then move it to `rel`.
    pub fn write_with(&mut self, rel: &str, f: impl FnOnce(&Path) -> cafv_core::Result<()>) -> CliResult<()> {
        let dest = self.path(rel);
        let tmp = tmp_path(&dest);
        f(&tmp).failed()?;
        fs::rename(&tmp, &dest)
            .map_err(|e| Error::Io { path: dest, source: e })
            .failed()?;
        self.record(rel)
    }

    /// Hash a file some other writer already put under the root.
    pub fn record(&mut self, rel: &str) -> CliResult<()> {
        let (bytes, sha256) = sha256_file(&self.path(rel)).failed()?;
        self.files.retain(|f| f.path != rel);
        self.files.push(FileDigest {
            path: rel.to_string(),
            bytes,
            sha256,
        });
        Ok(())
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> CliResult<()> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.output_dir = self.root.display().to_string();
        manifest.outputs = self.files;
        manifest.finished_at = now();
        let mut text = serde_json::to_string_pretty(&manifest).map_err(Error::from).failed()?;
        text.push('\n');
        write_atomic(&self.root.join(RUN_MANIFEST), text.as_bytes()).failed()
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
