//! Checkpoint directories: one `MMX1` file per parameter tensor plus a
//! `manifest.json` with names, shapes and the training seed.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::param::ParamSet;
use crate::text::mmx::{read_embeddings, write_embeddings, EmbeddingMatrix, MmxError};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: String,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: malformed manifest: {source}")]
    Manifest { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Tensor { path: PathBuf, source: MmxError },
    #[error("checkpoint is missing tensor {0}")]
    Missing(String),
    #[error("tensor {name}: checkpoint shape {found:?}, model expects {expected:?}")]
    Shape { name: String, found: (usize, usize), expected: (usize, usize) },
}

pub fn save(params: &ParamSet, model: &str, seed: u64, dir: &Path) -> Result<Manifest, CheckpointError> {
    fs::create_dir_all(dir).map_err(|source| CheckpointError::Io { path: dir.to_path_buf(), source })?;
    let mut tensors = Vec::with_capacity(params.len());
    for (_, p) in params.iter() {
        let file = format!("{}.mmx", p.name);
        let path = dir.join(&file);
        let m = EmbeddingMatrix::from_f64(&p.value).map_err(|source| CheckpointError::Tensor { path: path.clone(), source })?;
        write_embeddings(&m, &path).map_err(|source| CheckpointError::Tensor { path, source })?;
        tensors.push(TensorEntry { name: p.name.clone(), rows: p.value.nrows(), cols: p.value.ncols(), file });
    }
    let manifest = Manifest { model: model.to_string(), seed, tensors };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|source| CheckpointError::Io { path, source })?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CheckpointError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|source| CheckpointError::Io { path: path.clone(), source })?;
    serde_json::from_str(&text).map_err(|source| CheckpointError::Manifest { path, source })
}

/// Overwrites every tensor of `params` from the checkpoint in `dir`.
pub fn load_into(params: &mut ParamSet, dir: &Path) -> Result<Manifest, CheckpointError> {
    let manifest = read_manifest(dir)?;
    for id in params.ids().collect::<Vec<_>>() {
        let name = params.name(id).to_string();
        let entry = manifest.tensors.iter().find(|t| t.name == name).ok_or_else(|| CheckpointError::Missing(name.clone()))?;
        let path = dir.join(&entry.file);
        let m = read_embeddings(&path).map_err(|source| CheckpointError::Tensor { path, source })?;
        let expected = params.value(id).dim();
        if (m.rows(), m.width()) != expected {
            return Err(CheckpointError::Shape { name, found: (m.rows(), m.width()), expected });
        }
        *params.value_mut(id) = m.to_f64();
    }
    Ok(manifest)
}
