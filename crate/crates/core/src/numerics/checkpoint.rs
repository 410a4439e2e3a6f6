//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes   "HYTCKPT\0"
//! version  u32       1
//! width    u8        bytes per scalar (4 or 8)
//! hlen     u64       length of the JSON header
//! header   hlen      {"meta": .., "tensors": [{"name", "shape"}], "optimizer": {..} | null}
//! data               tensor values in header order, then (if present) Adam
//!                    first moments and second moments in the same order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"HYTCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    config: AdamConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerEntry>,
}

/// Named tensors plus free-form metadata and optional optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<F>)>,
    pub optimizer: Option<AdamState<F>>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerEntry {
                config: o.config,
                step: o.step,
            }),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(F::BYTES as u8);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut write = |t: &Tensor<F>| t.data().iter().for_each(|&v| v.write_le(&mut out));
        self.tensors.iter().for_each(|(_, t)| write(t));
        if let Some(o) = &self.optimizer {
            o.first.iter().for_each(&mut write);
            o.second.iter().for_each(&mut write);
        }
        out
    }

    /// Decodes a checkpoint written at either precision, converting to `F`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_owned());
        if bytes.len() < 21 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let width = bytes[12] as usize;
        let hlen = u64::from_le_bytes(bytes[13..21].try_into().unwrap()) as usize;
        let body = bytes
            .get(21..21 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut cursor = 21 + hlen;
        let mut read = |shape: &[usize]| -> Result<Tensor<F>> {
            let n: usize = shape.iter().product();
            let chunk = bytes
                .get(cursor..cursor + n * width)
                .ok_or_else(|| bad("truncated tensor data"))?;
            cursor += n * width;
            let data = match width {
                4 => chunk
                    .chunks(4)
                    .map(|c| F::of(f32::read_le(c) as f64))
                    .collect(),
                8 => chunk.chunks(8).map(|c| F::of(f64::read_le(c))).collect(),
                w => return Err(Error::Checkpoint(format!("unsupported scalar width {w}"))),
            };
            Tensor::new(shape, data)
        };
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            tensors.push((e.name.clone(), read(&e.shape)?));
        }
        let optimizer = match header.optimizer {
            Some(o) => {
                let mut first = Vec::new();
                let mut second = Vec::new();
                for e in &header.tensors {
                    first.push(read(&e.shape)?);
                }
                for e in &header.tensors {
                    second.push(read(&e.shape)?);
                }
                Some(AdamState::from_parts(o.config, o.step, first, second))
            }
            None => None,
        };
        if cursor != bytes.len() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            meta: header.meta,
            tensors,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<F>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}
