//! Versioned binary checkpoint: magic, format version, JSON header, then f64 blocks.
//!
//! Layout: 8-byte magic, u32 LE version, u64 LE header length, header JSON,
//! then each parameter's values as f64 LE in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{atomic_write, read_bytes};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MLABCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Model and training configuration, owned by the caller.
    pub config: serde_json::Value,
    pub seed: u64,
    pub step: usize,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(config: serde_json::Value, seed: u64, step: usize, named: Vec<(String, Tensor)>) -> Self {
        let params = named
            .iter()
            .map(|(name, t)| ParamEntry { name: name.clone(), rows: t.rows(), cols: t.cols() })
            .collect();
        Checkpoint {
            header: CheckpointHeader { config, seed, step, params },
            tensors: named.into_iter().map(|(_, t)| t).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.header
            .params
            .iter()
            .position(|p| p.name == name)
            .map(|i| &self.tensors[i])
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len());
        out.extend(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        out.extend((header.len() as u64).to_le_bytes());
        out.extend(&header);
        for t in &self.tensors {
            t.data().iter().for_each(|v| out.extend(v.to_le_bytes()));
        }
        out
    }

    pub fn decode(bytes: &[u8], name: &str) -> Result<Self> {
        let bad = |msg: String| Error::data(format!("{name}: {msg}"));
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if hlen > body.len() {
            return Err(bad("truncated header".into()));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
        let mut rest = &body[hlen..];
        let mut tensors = Vec::with_capacity(header.params.len());
        for p in &header.params {
            let n = p.rows * p.cols * 8;
            if rest.len() < n {
                return Err(bad(format!("truncated block for {}", p.name)));
            }
            let data = rest[..n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push(Tensor::new(p.rows, p.cols, data)?);
            rest = &rest[n..];
        }
        if !rest.is_empty() {
            return Err(bad(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint { header, tensors })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    atomic_write(path, &ckpt.encode())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&read_bytes(path)?, &path.display().to_string())
}
