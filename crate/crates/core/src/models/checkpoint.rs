//! Checkpoint directories: `manifest.json` plus `weights.bin`, every
//! parameter as little-endian `f64` concatenated in manifest order.
//! Adam moments, when any parameter has them, go to `optimizer.bin`.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use cafv_autodiff::{OptimState, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use super::{ContextEmbedding, ModelDims};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    #[serde(default)]
    pub optimizer_step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    /// `"gan"` for a model bundle, `"classifier"` for a softmax classifier.
    pub kind: String,
    pub seed: u64,
    pub interval_set: Vec<i32>,
    pub labels: Vec<i32>,
    pub dims: Option<ModelDims>,
    pub embedding: Option<ContextEmbedding>,
    pub hyperparameters: serde_json::Value,
    pub parameters: Vec<ParamEntry>,
}

impl CheckpointManifest {
    pub fn new(kind: &str, seed: u64, hyperparameters: serde_json::Value) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: kind.into(),
            seed,
            interval_set: Vec::new(),
            labels: Vec::new(),
            dims: None,
            embedding: None,
            hyperparameters,
            parameters: Vec::new(),
        }
    }
}

/// Write `store` under `dir`. The manifest's parameter list is rebuilt from
/// the store; the manifest is written last so a directory with a manifest
/// always has complete weights.
pub fn save_checkpoint(dir: &Path, manifest: &CheckpointManifest, store: &ParamStore) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = manifest.clone();
    manifest.format_version = CHECKPOINT_FORMAT_VERSION;
    manifest.parameters = store
        .iter()
        .map(|(name, p)| ParamEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            trainable: p.trainable,
            optimizer_step: p.state.step,
        })
        .collect();

    let weights = dir.join(WEIGHTS_FILE);
    write_floats(&weights, store.iter().map(|(_, p)| p.value.data()))?;

    let optimizer = dir.join(OPTIMIZER_FILE);
    let with_moments: Vec<_> = store.iter().filter(|(_, p)| p.state.step > 0).collect();
    if with_moments.is_empty() {
        if optimizer.exists() {
            fs::remove_file(&optimizer).map_err(|e| Error::io(&optimizer, e))?;
        }
    } else {
        let mut chunks: Vec<&[f64]> = Vec::new();
        for (name, p) in &with_moments {
            let (Some(m), Some(v)) = (&p.state.first_moment, &p.state.second_moment) else {
                return Err(Error::Checkpoint {
                    path: dir.into(),
                    message: format!("{name} has optimizer steps but no moments"),
                });
            };
            chunks.push(m.data());
            chunks.push(v.data());
        }
        write_floats(&optimizer, chunks.into_iter())?;
    }

    let path = dir.join(MANIFEST_FILE);
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint {
            path,
            message: format!(
                "unsupported format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                manifest.format_version
            ),
        });
    }
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, ParamStore)> {
    let manifest = read_manifest(dir)?;
    let total: usize = manifest.parameters.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    let values = read_floats(&dir.join(WEIGHTS_FILE), total)?;

    let moment_len: usize = manifest
        .parameters
        .iter()
        .filter(|p| p.optimizer_step > 0)
        .map(|p| 2 * p.shape.iter().product::<usize>())
        .sum();
    let moments = if moment_len > 0 {
        read_floats(&dir.join(OPTIMIZER_FILE), moment_len)?
    } else {
        Vec::new()
    };

    let mut store = ParamStore::new();
    let (mut at, mut mat) = (0, 0);
    for entry in &manifest.parameters {
        let n: usize = entry.shape.iter().product();
        let value = Tensor::new(entry.shape.clone(), values[at..at + n].to_vec())?;
        at += n;
        if !value.is_finite() {
            return Err(Error::Checkpoint {
                path: dir.into(),
                message: format!("parameter {} holds non-finite values", entry.name),
            });
        }
        store.insert(entry.name.clone(), value, entry.trainable)?;
        if entry.optimizer_step > 0 {
            let m = Tensor::new(entry.shape.clone(), moments[mat..mat + n].to_vec())?;
            let v = Tensor::new(entry.shape.clone(), moments[mat + n..mat + 2 * n].to_vec())?;
            mat += 2 * n;
            store.set_optim_state(
                &entry.name,
                OptimState {
                    step: entry.optimizer_step,
                    first_moment: Some(m),
                    second_moment: Some(v),
                },
            )?;
        }
    }
    Ok((manifest, store))
}

fn write_floats<'a>(path: &Path, chunks: impl Iterator<Item = &'a [f64]>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for chunk in chunks {
        for v in chunk {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_floats(path: &Path, count: usize) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let expected = count as u64 * 8;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    if bytes.len() as u64 != expected {
        return Err(Error::Checkpoint {
            path: path.into(),
            message: format!("{} trailing bytes", bytes.len() as u64 - expected),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
        .collect())
}
