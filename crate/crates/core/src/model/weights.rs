//! Weight file: 8-byte magic `BEASTWT1`, a little-endian `u32` header length,
//! a JSON header naming the configuration and each tensor's name, dtype and
//! shape, then the tensors' little-endian `f32` data in header order.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ModelConfig;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"BEASTWT1";

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("weight file I/O: {0}")]
    Io(#[from] io::Error),
    #[error("not a weight file (bad magic)")]
    Magic,
    #[error("malformed weight header: {0}")]
    Header(String),
    #[error("weight file has no tensor named {0}")]
    Missing(String),
    #[error("tensor {name} has shape {found:?}, configuration expects {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("weight file truncated: needs {needed} data bytes, has {available}")]
    Truncated { needed: usize, available: usize },
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(cfg: &ModelConfig, store: &ParamStore<f32>) -> Vec<u8> {
    let header = Header {
        config: cfg.clone(),
        tensors: store
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                dtype: "f32".into(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 4 * store.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in store.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ModelConfig, ParamStore<f32>), WeightsError> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(WeightsError::Magic);
    }
    let len_bytes: [u8; 4] = bytes
        .get(8..12)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| WeightsError::Header("missing header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let json = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| WeightsError::Header("header runs past end of file".into()))?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| WeightsError::Header(e.to_string()))?;
    let data = &bytes[12 + header_len..];

    let mut offsets = std::collections::HashMap::new();
    let mut pos = 0usize;
    for e in &header.tensors {
        if e.dtype != "f32" {
            return Err(WeightsError::Header(format!(
                "tensor {} has dtype {}",
                e.name, e.dtype
            )));
        }
        let n: usize = e.shape.iter().product();
        offsets.insert(e.name.as_str(), (pos, e));
        pos += 4 * n;
    }
    if data.len() < pos {
        return Err(WeightsError::Truncated {
            needed: pos,
            available: data.len(),
        });
    }
    if data.len() > pos {
        return Err(WeightsError::Header(format!(
            "{} trailing bytes",
            data.len() - pos
        )));
    }

    let mut store = ParamStore::new();
    for (name, shape) in header.config.expected_shapes() {
        let &(off, entry) = offsets
            .get(name.as_str())
            .ok_or_else(|| WeightsError::Missing(name.clone()))?;
        if entry.shape != shape {
            return Err(WeightsError::Shape {
                name,
                expected: shape,
                found: entry.shape.clone(),
            });
        }
        let n: usize = shape.iter().product();
        let values = data[off..off + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        store.insert(
            name,
            Tensor::new(shape, values).expect("shape matches length"),
        );
    }
    if store.len() != header.tensors.len() {
        return Err(WeightsError::Header(format!(
            "{} tensors stored, configuration expects {}",
            header.tensors.len(),
            store.len()
        )));
    }
    Ok((header.config, store))
}

pub fn save(path: &Path, cfg: &ModelConfig, store: &ParamStore<f32>) -> Result<(), WeightsError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&to_bytes(cfg, store))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelConfig, ParamStore<f32>), WeightsError> {
    from_bytes(&fs::read(path)?)
}
