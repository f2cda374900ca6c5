//! Single-file model checkpoints.
//!
//! Layout: one line of JSON (the manifest: format tag, model config, sizes,
//! free-form metadata and a `name`/`shape`/`offset` entry per tensor), a
//! newline, then every tensor as little-endian `f32` values back to back.
//! Offsets are byte positions inside the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::autodiff::ParamStore;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::{Dims, Model};

const FORMAT: &str = "cogdiag-checkpoint/1";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ModelConfig,
    dims: Dims,
    #[serde(default)]
    meta: Value,
    tensors: Vec<Entry>,
}

/// Rounds every parameter through `f32`, the precision checkpoints store.
/// Applied to the model that is kept as "best", so a saved and reloaded copy
/// evaluates exactly like the in-memory one.
pub fn round_to_f32(store: &mut ParamStore) {
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v = f64::from(*v as f32);
        }
    }
}

pub fn to_bytes(model: &Model, meta: &Value) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    for (name, t) in model.params().iter() {
        tensors.push(Entry {
            name: name.to_owned(),
            shape: t.shape(),
            offset: payload.len(),
        });
        for &v in t.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        config: model.config().clone(),
        dims: model.dims(),
        meta: meta.clone(),
        tensors,
    };
    let mut out = serde_json::to_vec(&manifest)?;
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model, Value)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("missing manifest line".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format `{}`", manifest.format)));
    }
    let payload = &bytes[nl + 1..];
    let mut model = Model::skeleton(&manifest.config, manifest.dims)?;
    let expected = model.params().len();
    if manifest.tensors.len() != expected {
        return Err(Error::Checkpoint(format!(
            "{} tensors stored, model needs {expected}",
            manifest.tensors.len()
        )));
    }
    for e in &manifest.tensors {
        let store = model.params_mut();
        let id = store
            .id(&e.name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{}`", e.name)))?;
        let t = store.get_mut(id);
        if t.shape() != e.shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` has shape {:?}, model needs {:?}",
                e.name,
                e.shape,
                t.shape()
            )));
        }
        let end = e.offset + 4 * t.len();
        let raw = payload
            .get(e.offset..end)
            .ok_or_else(|| Error::Checkpoint(format!("payload too short for `{}`", e.name)))?;
        for (v, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *v = f64::from(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")));
        }
    }
    Ok((model, manifest.meta))
}

pub fn save(model: &Model, meta: &Value, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model, meta)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(Model, Value)> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dims;

    fn model() -> Model {
        let dims = Dims {
            n_students: 3,
            n_exercises: 4,
            n_concepts: 2,
            text_dim: 8,
            d: 2,
        };
        let mut cfg = ModelConfig::default();
        cfg.head.hidden = vec![4];
        let mut m = Model::skeleton(&cfg, dims).unwrap();
        for (i, t) in m.params_mut().tensors_mut().iter_mut().enumerate() {
            for (j, v) in t.data_mut().iter_mut().enumerate() {
                *v = (i as f64 + 1.0) / 3.0 - j as f64 * 0.1;
            }
        }
        m
    }

    #[test]
    fn round_trip_after_rounding_is_exact() {
        let mut m = model();
        round_to_f32(m.params_mut());
        let bytes = to_bytes(&m, &serde_json::json!({"epoch": 3})).unwrap();
        let (back, meta) = from_bytes(&bytes).unwrap();
        assert_eq!(meta["epoch"], 3);
        for ((na, a), (nb, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(a, b);
        }
        assert_eq!(to_bytes(&back, &meta).unwrap(), bytes);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = model();
        let bytes = to_bytes(&m, &Value::Null).unwrap();
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Checkpoint(_))
        ));
        assert!(matches!(from_bytes(b"{}"), Err(Error::Checkpoint(_))));
        let text = String::from_utf8_lossy(&bytes).replace("\"n_exercises\":4", "\"n_exercises\":5");
        let mut patched = text.as_bytes()[..text.find('\n').unwrap() + 1].to_vec();
        patched.extend_from_slice(&bytes[bytes.iter().position(|&b| b == b'\n').unwrap() + 1..]);
        assert!(matches!(from_bytes(&patched), Err(Error::Checkpoint(_))));
    }
}
