//! Checkpoints: a JSON manifest plus a sibling blob of little-endian f32.
//!
//! `save(model, meta, "run/model.ckpt")` writes `run/model.ckpt` (manifest)
//! and `run/model.ckpt.bin` (parameters, then batch-norm running statistics,
//! in visitor order). Models in f64 are narrowed to f32 on save.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Layer;
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};
use crate::train::EpochLog;

pub const CHECKPOINT_FORMAT: &str = "invoamc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f32 elements.
    pub offset: usize,
}

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    #[serde(default)]
    pub loss_history: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub blob: String,
    pub blob_bytes: usize,
    #[serde(flatten)]
    pub meta: CheckpointMeta,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

fn blob_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".bin");
    path.with_file_name(name)
}

pub fn save<T: Real>(
    model: &Model<T>,
    meta: &CheckpointMeta,
    path: impl AsRef<Path>,
) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut tensors = Vec::new();
    let mut bytes = Vec::new();
    let mut push = |name: &str, t: &Tensor<T>| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.dims().to_vec(),
            offset: bytes.len() / 4,
        });
        for &v in t.data() {
            bytes.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    };
    model.visit_params("", &mut |n, p| push(n, &p.value));
    model.visit_buffers("", &mut |n, t| push(n, t));

    let blob = blob_path(path);
    let manifest = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dtype: "f32le".into(),
        blob: blob
            .file_name()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned(),
        blob_bytes: bytes.len(),
        meta: meta.clone(),
        config: model.config().clone(),
        tensors,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&blob, &bytes).map_err(|e| Error::io(&blob, e))?;
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<(Model<T>, Checkpoint)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("bad manifest: {e}")))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::format(
            path,
            format!("not a checkpoint ({})", manifest.format),
        ));
    }
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                manifest.version
            ),
        ));
    }
    if manifest.dtype != "f32le" {
        return Err(Error::format(
            path,
            format!("unsupported dtype {}", manifest.dtype),
        ));
    }
    let blob = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if bytes.len() != manifest.blob_bytes {
        return Err(Error::format(
            &blob,
            format!(
                "blob has {} bytes, manifest says {}",
                bytes.len(),
                manifest.blob_bytes
            ),
        ));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    let mut model = Model::<T>::build(&manifest.config, &mut Rng::new(manifest.meta.seed))?;
    let layout = model.state_layout();
    if layout.len() != manifest.tensors.len() {
        return Err(Error::format(
            path,
            format!(
                "{} tensors stored, model expects {}",
                manifest.tensors.len(),
                layout.len()
            ),
        ));
    }
    for ((name, shape), entry) in layout.iter().zip(&manifest.tensors) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::format(
                path,
                format!(
                    "tensor {} {:?} does not match model tensor {name} {shape:?}",
                    entry.name, entry.shape
                ),
            ));
        }
        let n: usize = shape.iter().product();
        if entry.offset + n > values.len() {
            return Err(Error::format(
                &blob,
                format!("tensor {name} runs past end of blob"),
            ));
        }
    }

    let mut entries = manifest.tensors.iter();
    let mut fill = |t: &mut Tensor<T>| {
        let e = entries.next().expect("layout checked above");
        let src = &values[e.offset..e.offset + t.numel()];
        for (d, &s) in t.data_mut().iter_mut().zip(src) {
            *d = T::of(s as f64);
        }
    };
    model.visit_params_mut("", &mut |_, p| fill(&mut p.value));
    model.visit_buffers_mut("", &mut |_, t| fill(t));
    Ok((model, manifest))
}
