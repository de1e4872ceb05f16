//! On-disk checkpoint layout:
//!
//! ```text
//! <dir>/manifest.json        variant, config, seed, iteration, tensor table
//! <dir>/weights/<name>.f32   little-endian float32, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelVariant, NetworkConfig};
use super::model::{init_params, MoNetParams};
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::Scalar;

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub variant: ModelVariant,
    pub config: NetworkConfig,
    pub seed: u64,
    pub iteration: u64,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    /// Free-form training metadata (learning-rate law, validation loss).
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    params: &MoNetParams<T>,
    seed: u64,
    iteration: u64,
    extra: serde_json::Value,
) -> Result<CheckpointManifest> {
    let wdir = dir.join("weights");
    fs::create_dir_all(&wdir).map_err(|e| Error::io(&wdir, e))?;
    let mut tensors = Vec::new();
    for (name, t) in params.named_tensors() {
        let file = format!("weights/{name}.f32");
        let mut bytes = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            bytes.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        schema_version: CHECKPOINT_SCHEMA,
        variant: params.variant,
        config: params.config.clone(),
        seed,
        iteration,
        dtype: "float32-le".into(),
        tensors,
        extra,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}

/// Loads and validates every tensor shape against the manifest's config.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(MoNetParams<T>, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    if manifest.schema_version != CHECKPOINT_SCHEMA {
        return Err(Error::InvalidInput(format!(
            "checkpoint schema {} is not supported",
            manifest.schema_version
        )));
    }
    let mut params: MoNetParams<T> = init_params(manifest.seed, manifest.variant, &manifest.config)?;
    let expected: Vec<(String, Vec<usize>)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != manifest.tensors.len() {
        return Err(Error::Shape(format!(
            "checkpoint lists {} tensors, architecture has {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let mut blobs = Vec::with_capacity(expected.len());
    for ((name, shape), entry) in expected.iter().zip(&manifest.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Shape(format!(
                "tensor {} {:?} does not match expected {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let n: usize = shape.iter().product();
        if bytes.len() != n * 4 {
            return Err(Error::Shape(format!("{} holds {} bytes, expected {}", entry.file, bytes.len(), n * 4)));
        }
        blobs.push(
            bytes
                .chunks_exact(4)
                .map(|c| T::from_f32v(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect::<Vec<T>>(),
        );
    }
    let mut idx = 0;
    params.visit_mut("", &mut |_, t| {
        t.data_mut().copy_from_slice(&blobs[idx]);
        idx += 1;
    });
    Ok((params, manifest))
}

/// SHA-256 over the manifest and every weight blob, in manifest order.
pub fn checkpoint_hash(dir: &Path) -> Result<String> {
    let manifest = read_manifest(dir)?;
    let mut h = Sha256::new();
    let mpath = dir.join("manifest.json");
    h.update(fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?);
    for entry in &manifest.tensors {
        let path = dir.join(&entry.file);
        h.update(fs::read(&path).map_err(|e| Error::io(&path, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// SHA-256 of the in-memory parameter values (bit patterns as `f64`).
pub fn params_hash<T: Scalar>(params: &MoNetParams<T>) -> String {
    let mut h = Sha256::new();
    for v in params.flatten() {
        h.update(v.as_f64().to_le_bytes());
    }
    hex::encode(h.finalize())
}
