//! Checkpoints: a raw weights blob plus a versioned JSON sidecar.
//!
//! The sidecar is the file users pass around; the blob sits next to it with
//! the same stem and a `.weights` extension. Weights are stored as
//! little-endian `f64` whatever the scalar type of the model, so `f32` and
//! `f64` checkpoints are interchangeable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{build_model, BackboneSpec, HeadKind, Model};
use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::imaging::PreprocessParams;
use crate::scalar::Scalar;

pub const SCHEMA_VERSION: u32 = 1;

const MAGIC: &[u8; 8] = b"WFSHWGT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub head: HeadKind,
    pub backbone: BackboneSpec,
    pub input_size: [usize; 2],
    pub preprocess: PreprocessParams,
    pub threshold: f64,
    /// Scalar type the model was trained in.
    pub scalar: String,
    pub weights_file: String,
    pub param_count: usize,
    #[serde(default)]
    pub epoch: Option<usize>,
    #[serde(default)]
    pub val_acc: Option<f64>,
}

impl CheckpointMeta {
    pub fn new<T: Scalar>(model: &Model<T>, preprocess: &PreprocessParams, threshold: f64) -> Self {
        let (h, w) = model.input_size();
        CheckpointMeta {
            schema_version: SCHEMA_VERSION,
            head: model.head(),
            backbone: model.backbone().clone(),
            input_size: [h, w],
            preprocess: *preprocess,
            threshold,
            scalar: T::NAME.to_string(),
            weights_file: String::new(),
            param_count: model.param_count(),
            epoch: None,
            val_acc: None,
        }
    }
}

/// Sidecar path for a checkpoint given either of its two files.
pub fn sidecar_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "weights") {
        path.with_extension("json")
    } else {
        path.to_path_buf()
    }
}

pub fn weights_path(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("weights")
}

fn encode(weights: &[f64]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 8 * weights.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    for w in weights {
        buf.extend_from_slice(&w.to_le_bytes());
    }
    buf
}

fn decode(bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    let bad = |message: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a weights file (bad header)"));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != count.saturating_mul(8) {
        return Err(bad(&format!(
            "header announces {count} values but the file holds {} bytes of data",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Write the weights blob and then the sidecar, each atomically.
pub fn save_checkpoint<T: Scalar>(model: &Model<T>, meta: &CheckpointMeta, path: &Path) -> Result<CheckpointMeta> {
    let sidecar = sidecar_path(path);
    let blob = weights_path(&sidecar);
    let weights: Vec<f64> = model.export_weights().into_iter().map(Scalar::as_f64).collect();
    write_atomic(&blob, &encode(&weights))?;
    let mut meta = meta.clone();
    meta.weights_file = blob
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    meta.param_count = weights.len();
    let json = serde_json::to_string_pretty(&meta)?;
    write_atomic(&sidecar, json.as_bytes())?;
    Ok(meta)
}

pub fn read_sidecar(path: &Path) -> Result<CheckpointMeta> {
    let sidecar = sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
        path: sidecar.clone(),
        message: e.to_string(),
    })?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::Checkpoint {
            path: sidecar,
            message: format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                meta.schema_version
            ),
        });
    }
    Ok(meta)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Model<T>, CheckpointMeta)> {
    let sidecar = sidecar_path(path);
    let meta = read_sidecar(&sidecar)?;
    let blob = sidecar
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&meta.weights_file);
    let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    let weights: Vec<T> = decode(&bytes, &blob)?.into_iter().map(T::lit).collect();
    let mut model = build_model::<T>(
        &meta.backbone,
        meta.head,
        (meta.input_size[0], meta.input_size[1]),
        0,
    )?;
    model.import_weights(&weights).map_err(|e| Error::Checkpoint {
        path: blob.clone(),
        message: e.to_string(),
    })?;
    Ok((model, meta))
}
