//! Portable parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! 0..4        magic  b"CCPB"
//! 4..6        format version (u16, currently 1)
//! 6..8        reserved (u16, zero)
//! 8..12       header length H in bytes (u32)
//! 12..12+H    UTF-8 JSON header:
//!             {"meta": {string: string}, "arrays": [{"name": string, "shape": [uint]}]}
//! 12+H..      payload: each array's values as f64 (IEEE-754 LE), in header order
//! ```
//!
//! The blob must end exactly after the last array; anything shorter or longer
//! is rejected. f64 bit patterns are copied verbatim so round trips are exact.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, Dense, MlpNetwork};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CCPB";
const VERSION: u16 = 1;
const PREAMBLE: usize = 12;

/// A dense array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl ParamTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("shape {shape:?} has a zero dimension")));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("tensor values must be finite".into()));
        }
        Ok(ParamTensor { shape, values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: BTreeMap<String, String>,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

/// Named arrays plus string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamBlob {
    pub meta: BTreeMap<String, String>,
    arrays: Vec<(String, ParamTensor)>,
}

impl ParamBlob {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: ParamTensor) {
        self.arrays.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn arrays(&self) -> impl Iterator<Item = (&str, &ParamTensor)> {
        self.arrays.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, t)| ArrayEntry {
                    name: name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header is always serializable");
        let payload: usize = self.arrays.iter().map(|(_, t)| t.values.len() * 8).sum();
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.arrays {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE {
            return Err(Error::Blob(format!("{} bytes is shorter than the preamble", bytes.len())));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Blob("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Blob(format!("unsupported format version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header_end = PREAMBLE
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Blob("header runs past the end of the blob".into()))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| Error::Blob(format!("unreadable header: {e}")))?;

        let mut offset = header_end;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for entry in header.arrays {
            let count = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Blob(format!("array {} has an absurd shape", entry.name)))?;
            let end = count
                .checked_mul(8)
                .and_then(|n| n.checked_add(offset))
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| Error::Blob(format!("payload truncated in array {}", entry.name)))?;
            let values = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = ParamTensor::new(entry.shape, values)
                .map_err(|e| Error::Blob(format!("array {}: {e}", entry.name)))?;
            arrays.push((entry.name, tensor));
            offset = end;
        }
        if offset != bytes.len() {
            return Err(Error::Blob(format!(
                "{} trailing bytes after the last array",
                bytes.len() - offset
            )));
        }
        Ok(ParamBlob {
            meta: header.meta,
            arrays,
        })
    }
}

impl MlpNetwork {
    /// Appends this network's arrays under `prefix` (e.g. `"encoder."`).
    pub fn write_to_blob(&self, blob: &mut ParamBlob, prefix: &str) {
        blob.meta
            .insert(format!("{prefix}layer_count"), self.layers.len().to_string());
        for (i, layer) in self.layers.iter().enumerate() {
            blob.meta.insert(
                format!("{prefix}layers.{i}.activation"),
                layer.activation.name().to_string(),
            );
            let w = ParamTensor {
                shape: vec![layer.output_dim(), layer.input_dim()],
                values: layer.weights.iter().copied().collect(),
            };
            let b = ParamTensor {
                shape: vec![layer.output_dim()],
                values: layer.bias.to_vec(),
            };
            blob.push(format!("{prefix}layers.{i}.weight"), w);
            blob.push(format!("{prefix}layers.{i}.bias"), b);
        }
    }

    pub fn read_from_blob(blob: &ParamBlob, prefix: &str) -> Result<Self> {
        let count: usize = blob
            .meta
            .get(&format!("{prefix}layer_count"))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Schema(format!("missing {prefix}layer_count")))?;
        let mut layers = Vec::with_capacity(count);
        for i in 0..count {
            let act_key = format!("{prefix}layers.{i}.activation");
            let activation = blob
                .meta
                .get(&act_key)
                .and_then(|s| Activation::from_name(s))
                .ok_or_else(|| Error::Schema(format!("missing or unknown {act_key}")))?;
            let w = blob
                .get(&format!("{prefix}layers.{i}.weight"))
                .ok_or_else(|| Error::Schema(format!("missing {prefix}layers.{i}.weight")))?;
            let b = blob
                .get(&format!("{prefix}layers.{i}.bias"))
                .ok_or_else(|| Error::Schema(format!("missing {prefix}layers.{i}.bias")))?;
            if w.shape.len() != 2 || b.shape.len() != 1 || b.shape[0] != w.shape[0] {
                return Err(Error::Schema(format!(
                    "layer {i}: weight shape {:?} and bias shape {:?} are inconsistent",
                    w.shape, b.shape
                )));
            }
            let weights = Array2::from_shape_vec((w.shape[0], w.shape[1]), w.values.clone())
                .map_err(|e| Error::Schema(e.to_string()))?;
            let bias = Array1::from(b.values.clone());
            layers.push(Dense {
                weights,
                bias,
                activation,
            });
        }
        MlpNetwork::from_layers(layers).map_err(|e| Error::Schema(e.to_string()))
    }
}

pub fn serialize_params(net: &MlpNetwork) -> Vec<u8> {
    let mut blob = ParamBlob::new();
    net.write_to_blob(&mut blob, "");
    blob.to_bytes()
}

pub fn deserialize_params(bytes: &[u8]) -> Result<MlpNetwork> {
    MlpNetwork::read_from_blob(&ParamBlob::from_bytes(bytes)?, "")
}
