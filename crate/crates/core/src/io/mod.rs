//! On-disk formats: logit containers, audit JSONL, checkpoints, and reports.
//!
//! Every writer goes through [`atomic_write`], and every reader rejects
//! malformed input with a data error naming the file.

mod checkpoint;
mod logits;
mod report;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::margin::MarginRecord;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, ParamEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use logits::{read_logits, write_logits, Dtype, LogitsContainer, LogitsHeader, ROW_MAJOR_LE};
pub use report::{csv_field, write_csv, InputDigest, Provenance, Report};

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?)
        .map_err(|_| Error::data(format!("{} is not valid UTF-8", path.display())))
}

/// Lowercase hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(read_bytes(path)?)))
}

/// Target token ids, whitespace separated.
pub fn read_targets(path: &Path) -> Result<Vec<u32>> {
    read_text(path)?
        .split_whitespace()
        .enumerate()
        .map(|(i, tok)| {
            tok.parse().map_err(|_| {
                Error::data(format!("{}: entry {i} ({tok:?}) is not a token id", path.display()))
            })
        })
        .collect()
}

pub fn write_targets(path: &Path, targets: &[u32]) -> Result<()> {
    let mut s = targets.iter().map(u32::to_string).collect::<Vec<_>>().join("\n");
    s.push('\n');
    atomic_write(path, s.as_bytes())
}

/// Token texts: a JSON array with one decoded target string per position id.
pub fn read_token_texts(path: &Path) -> Result<Vec<String>> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::data(format!("{}: token texts: {e}", path.display())))
}

/// Frequency counts: a JSON object mapping token id (as a string key) to its count.
pub fn read_freq_counts(path: &Path) -> Result<HashMap<u32, u64>> {
    let raw: HashMap<String, u64> = serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::data(format!("{}: frequency counts: {e}", path.display())))?;
    raw.into_iter()
        .map(|(k, v)| {
            k.parse()
                .map(|id| (id, v))
                .map_err(|_| Error::data(format!("{}: key {k:?} is not a token id", path.display())))
        })
        .collect()
}

pub const AUDIT_VERSION: u32 = 1;

/// First line of an audit file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditHeader {
    pub version: u32,
    pub count: usize,
    /// Precision the margins were computed from: `f32`, `bf16`, or `f32-recompute`.
    pub dtype: String,
    pub tau: f64,
    /// `SOURCE_DATE_EPOCH` when set, otherwise null, so reruns are byte-identical.
    pub created: Option<String>,
    pub seed: Option<u64>,
}

impl AuditHeader {
    pub fn new(dtype: &str, count: usize, tau: f64, seed: Option<u64>) -> Self {
        AuditHeader {
            version: AUDIT_VERSION,
            count,
            dtype: dtype.to_string(),
            tau,
            created: std::env::var("SOURCE_DATE_EPOCH").ok(),
            seed,
        }
    }
}

pub fn encode_audit(header: &AuditHeader, records: &[MarginRecord]) -> Result<Vec<u8>> {
    if header.count != records.len() {
        return Err(Error::usage(format!(
            "audit header counts {} records but {} were given",
            header.count,
            records.len()
        )));
    }
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.push(b'\n');
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    Ok(out)
}

pub fn write_audit(path: &Path, header: &AuditHeader, records: &[MarginRecord]) -> Result<()> {
    atomic_write(path, &encode_audit(header, records)?)
}

pub fn read_audit(path: &Path) -> Result<(AuditHeader, Vec<MarginRecord>)> {
    let text = read_text(path)?;
    let bad = |line: usize, msg: String| Error::data(format!("{}:{line}: {msg}", path.display()));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| bad(1, "empty audit file".into()))?;
    let header: AuditHeader = serde_json::from_str(first).map_err(|e| bad(1, format!("header: {e}")))?;
    if header.version != AUDIT_VERSION {
        return Err(bad(1, format!("audit version {} (expected {AUDIT_VERSION})", header.version)));
    }
    let records = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(i + 1, e.to_string())))
        .collect::<Result<Vec<MarginRecord>>>()?;
    if records.len() != header.count {
        return Err(bad(1, format!("header counts {} records, file has {}", header.count, records.len())));
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<MarginRecord> {
        vec![
            MarginRecord { position: 0, target: 1, top1: 1, top2: 0, margin: 0.1 + 0.2, correct: true },
            MarginRecord { position: 1, target: 0, top1: 2, top2: 0, margin: 1e-300, correct: false },
            MarginRecord { position: 2, target: 2, top1: 2, top2: 1, margin: std::f64::consts::PI, correct: true },
        ]
    }

    #[test]
    fn audit_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let header = AuditHeader { version: 1, count: 3, dtype: "f32".into(), tau: 0.5, created: None, seed: Some(7) };
        write_audit(&path, &header, &records()).unwrap();
        let (h, r) = read_audit(&path).unwrap();
        assert_eq!(h, header);
        for (a, b) in r.iter().zip(records()) {
            assert_eq!(a.margin.to_bits(), b.margin.to_bits());
            assert_eq!(*a, b);
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, encode_audit(&h, &r).unwrap());
    }

    #[test]
    fn audit_count_and_version_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        let mut header = AuditHeader { version: 1, count: 3, dtype: "f32".into(), tau: 0.5, created: None, seed: None };
        let mut bytes = encode_audit(&header, &records()).unwrap();
        bytes.truncate(bytes.len() - 1);
        let cut = bytes.iter().rposition(|&b| b == b'\n').unwrap();
        std::fs::write(&path, &bytes[..=cut]).unwrap();
        assert!(matches!(read_audit(&path), Err(Error::Data(_))));

        header.version = 9;
        std::fs::write(&path, encode_audit(&header, &records()).unwrap()).unwrap();
        assert!(matches!(read_audit(&path), Err(Error::Data(_))));
        std::fs::write(&path, b"").unwrap();
        assert!(matches!(read_audit(&path), Err(Error::Data(_))));
    }

    #[test]
    fn side_inputs_parse() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("t.txt");
        std::fs::write(&t, "3 1\n4\t1 5\n").unwrap();
        assert_eq!(read_targets(&t).unwrap(), vec![3, 1, 4, 1, 5]);
        std::fs::write(&t, "3 x").unwrap();
        assert!(matches!(read_targets(&t), Err(Error::Data(_))));

        let f = dir.path().join("f.json");
        std::fs::write(&f, r#"{"7": 5, "9": 150}"#).unwrap();
        assert_eq!(read_freq_counts(&f).unwrap(), HashMap::from([(7, 5), (9, 150)]));
        std::fs::write(&f, r#"{"seven": 5}"#).unwrap();
        assert!(read_freq_counts(&f).is_err());

        let x = dir.path().join("x.json");
        std::fs::write(&x, r#"[",", " the"]"#).unwrap();
        assert_eq!(read_token_texts(&x).unwrap(), vec![",".to_string(), " the".to_string()]);
    }

    #[test]
    fn missing_file_is_exit_2() {
        let e = read_targets(Path::new("/nonexistent/targets.txt")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn sha_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        atomic_write(&p, b"abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
