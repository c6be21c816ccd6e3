//! Logit container: one JSON header line, then a raw little-endian payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{atomic_write, read_bytes};
use crate::error::{Error, Result};
use crate::margin::{bf16_bits_to_f32, f32_to_bf16_bits};

pub const ROW_MAJOR_LE: &str = "row-major-le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    Bf16,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::Bf16 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::Bf16 => "bf16",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsHeader {
    pub rows: usize,
    pub cols: usize,
    pub dtype: Dtype,
    pub layout: String,
    #[serde(default)]
    pub corpus_id: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
}

impl LogitsHeader {
    pub fn new(rows: usize, cols: usize, dtype: Dtype) -> Self {
        LogitsHeader {
            rows,
            cols,
            dtype,
            layout: ROW_MAJOR_LE.to_string(),
            corpus_id: None,
            model_id: None,
        }
    }
}

/// A row-major matrix of f32 values. bf16 payloads are widened on read.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsContainer {
    pub header: LogitsHeader,
    pub values: Vec<f32>,
}

impl LogitsContainer {
    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.header.cols..(r + 1) * self.header.cols]
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        if h.rows * h.cols != self.values.len() {
            return Err(Error::usage(format!(
                "header says {}x{} but {} values were given",
                h.rows,
                h.cols,
                self.values.len()
            )));
        }
        let mut out = serde_json::to_vec(h).expect("header serializes");
        out.push(b'\n');
        match h.dtype {
            Dtype::F32 => self.values.iter().for_each(|v| out.extend(v.to_le_bytes())),
            Dtype::Bf16 => self
                .values
                .iter()
                .for_each(|&v| out.extend(f32_to_bf16_bits(v).to_le_bytes())),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], name: &str) -> Result<Self> {
        let bad = |msg: String| Error::data(format!("{name}: {msg}"));
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("missing JSON header line".into()))?;
        let header: LogitsHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(format!("header: {e}")))?;
        if header.layout != ROW_MAJOR_LE {
            return Err(bad(format!("unsupported layout {:?}", header.layout)));
        }
        let payload = &bytes[nl + 1..];
        let expected = header
            .rows
            .checked_mul(header.cols)
            .and_then(|n| n.checked_mul(header.dtype.size()))
            .ok_or_else(|| bad("header dimensions overflow".into()))?;
        if payload.len() != expected {
            return Err(bad(format!(
                "payload is {} bytes, header implies {expected}",
                payload.len()
            )));
        }
        let values = match header.dtype {
            Dtype::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            Dtype::Bf16 => payload
                .chunks_exact(2)
                .map(|c| bf16_bits_to_f32(u16::from_le_bytes([c[0], c[1]])))
                .collect(),
        };
        Ok(LogitsContainer { header, values })
    }
}

pub fn write_logits(path: &Path, container: &LogitsContainer) -> Result<()> {
    atomic_write(path, &container.encode()?)
}

pub fn read_logits(path: &Path) -> Result<LogitsContainer> {
    LogitsContainer::decode(&read_bytes(path)?, &path.display().to_string())
}
