//! `weights.bin` (little-endian f32, concatenated in visit order) plus a
//! `weights.json` manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::param::{LearningGroup, Module, ParamKind};
use super::real::Real;
use crate::{Error, Result};

pub const WEIGHTS_BIN: &str = "weights.bin";
pub const WEIGHTS_JSON: &str = "weights.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: LearningGroup,
    pub kind: ParamKind,
    /// Byte offset into `weights.bin`.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub dtype: String,
    /// Free-form architecture description supplied by the caller.
    pub architecture: serde_json::Value,
    pub tensors: Vec<CheckpointEntry>,
    pub total_bytes: usize,
}

impl CheckpointManifest {
    pub fn entry(&self, name: &str) -> Option<&CheckpointEntry> {
        self.tensors.iter().find(|e| e.name == name)
    }
}

/// Writes every parameter and buffer of `module` into `dir`.
pub fn save_checkpoint<T: Real, M: Module<T> + ?Sized>(
    dir: &Path,
    module: &M,
    architecture: serde_json::Value,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bytes: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    module.visit(&mut |p| {
        tensors.push(CheckpointEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            group: p.group,
            kind: p.kind,
            offset: bytes.len(),
        });
        for &v in p.value.data() {
            bytes.extend_from_slice(&(v.f64() as f32).to_le_bytes());
        }
    });
    let manifest = CheckpointManifest {
        dtype: "f32-le".into(),
        architecture,
        tensors,
        total_bytes: bytes.len(),
    };
    let bin = dir.join(WEIGHTS_BIN);
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    let js = dir.join(WEIGHTS_JSON);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&js, e))?;
    fs::write(&js, text).map_err(|e| Error::io(&js, e))?;
    Ok(manifest)
}

/// Reads a checkpoint directory without interpreting it.
pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, Vec<f32>)> {
    let js = dir.join(WEIGHTS_JSON);
    let text = fs::read_to_string(&js).map_err(|e| Error::io(&js, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::json(&js, e))?;
    let bin = dir.join(WEIGHTS_BIN);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != manifest.total_bytes || bytes.len() % 4 != 0 {
        return Err(Error::invalid(format!(
            "{} holds {} bytes, manifest expects {}",
            bin.display(),
            bytes.len(),
            manifest.total_bytes
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((manifest, data))
}

/// Copies checkpoint values into every parameter of `module` whose name
/// passes `filter`. Each selected parameter must exist in the checkpoint with
/// the same shape.
pub fn apply_checkpoint<T: Real, M: Module<T> + ?Sized>(
    module: &mut M,
    manifest: &CheckpointManifest,
    data: &[f32],
    filter: &dyn Fn(&str) -> bool,
) -> Result<usize> {
    let mut err = None;
    let mut loaded = 0;
    module.visit_mut(&mut |p| {
        if err.is_some() || !filter(&p.name) {
            return;
        }
        let Some(e) = manifest.entry(&p.name) else {
            err = Some(Error::ArchitectureMismatch(format!(
                "parameter {} is missing from the checkpoint",
                p.name
            )));
            return;
        };
        if e.shape != p.value.shape() {
            err = Some(Error::ArchitectureMismatch(format!(
                "parameter {} has shape {:?} in the checkpoint but {:?} in the model",
                p.name,
                e.shape,
                p.value.shape()
            )));
            return;
        }
        let start = e.offset / 4;
        let n = p.value.len();
        let Some(src) = data.get(start..start + n) else {
            err = Some(Error::invalid(format!("checkpoint data for {} is truncated", p.name)));
            return;
        };
        for (d, &s) in p.value.data_mut().iter_mut().zip(src) {
            *d = T::of(f64::from(s));
        }
        loaded += 1;
    });
    match err {
        Some(e) => Err(e),
        None => Ok(loaded),
    }
}
