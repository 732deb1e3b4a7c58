//! Weight archive.
//!
//! ```text
//! bytes 0..8      magic "XPROTW1\0"
//! bytes 8..16     manifest length L, u64 little-endian
//! bytes 16..16+L  UTF-8 JSON manifest {config, tensors: [{name, shape, dtype, offset, byte_len}]}
//! bytes 16+L..    payload; each tensor little-endian row-major at `offset`
//!                 (relative to the payload start)
//! ```
//!
//! Writers always emit `f64`. Readers also accept `f32` tensors and widen them.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::weights::{expected_shapes, ModelWeights};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"XPROTW1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub offset: u64,
    pub byte_len: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_weights(config: &ModelConfig, weights: &ModelWeights) -> Result<Vec<u8>> {
    config.validate()?;
    let names = expected_shapes(config);
    let tensors = weights.tensors();
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for ((name, shape), t) in names.into_iter().zip(&tensors) {
        if t.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                name,
                manifest: t.shape().to_vec(),
                expected: shape,
            });
        }
        let byte_len = (t.len() * 8) as u64;
        entries.push(TensorEntry {
            name,
            shape,
            dtype: DType::F64,
            offset,
            byte_len,
        });
        offset += byte_len;
    }
    let manifest = serde_json::to_vec(&Manifest {
        config: config.clone(),
        tensors: entries,
    })?;
    let mut out = Vec::with_capacity(16 + manifest.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for t in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn load_weights(bytes: &[u8]) -> Result<(ModelConfig, ModelWeights)> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated("missing manifest length".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize
        .checked_add(len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Truncated("manifest extends past end of file".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..payload_start])?;
    let config = manifest.config;
    config.validate()?;
    let payload = &bytes[payload_start..];

    let expected = expected_shapes(&config);
    if manifest.tensors.len() != expected.len() {
        return Err(Error::Config(format!(
            "manifest lists {} tensors, config implies {}",
            manifest.tensors.len(),
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(expected.len());
    for (entry, (name, shape)) in manifest.tensors.iter().zip(expected) {
        if entry.name != name {
            return Err(Error::Config(format!(
                "manifest tensor {:?} where {name:?} expected",
                entry.name
            )));
        }
        if entry.shape != shape {
            return Err(Error::ShapeMismatch {
                name,
                manifest: entry.shape.clone(),
                expected: shape,
            });
        }
        let count: usize = shape.iter().product();
        let width = entry.dtype.width();
        if entry.byte_len as usize != count * width {
            return Err(Error::ShapeMismatch {
                name,
                manifest: vec![entry.byte_len as usize / width],
                expected: vec![count],
            });
        }
        let start = entry.offset as usize;
        let end = start
            .checked_add(entry.byte_len as usize)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| Error::Truncated(format!("tensor {name} extends past end of payload")))?;
        let raw = &payload[start..end];
        let data: Vec<f64> = match entry.dtype {
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect(),
        };
        tensors.push(Tensor::new(shape, data)?);
    }
    let weights = ModelWeights::from_ordered(&config, tensors)?;
    if !weights.is_finite() {
        return Err(Error::NonFinite("archive contains non-finite weights".into()));
    }
    Ok((config, weights))
}
