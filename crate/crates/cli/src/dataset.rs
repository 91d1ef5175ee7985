//! `SEQB` dataset files.
//!
//! Layout (little-endian): magic `SEQB`, `u16` version 1, `u64` M, T, d, K,
//! then `M·T·d` `f64` features (sequence-major, frame-second, feature-minor),
//! then `M` `u32` labels counted from 1.

use std::path::Path;

use seqratio::{Labels, SequenceBatch};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

const MAGIC: &[u8; 4] = b"SEQB";
const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 * 8;

pub fn encode(batch: &SequenceBatch) -> Vec<u8> {
    let (m, t, d) = (batch.num_sequences(), batch.len(), batch.dim());
    let mut out = Vec::with_capacity(HEADER_LEN + m * t * d * 8 + m * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [m, t, d, batch.num_classes()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for x in batch.features() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for &y in batch.labels().as_slice() {
        out.extend_from_slice(&(y as u32 + 1).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> CliResult<SequenceBatch> {
    let bad = |reason: String| CliError::format(path, reason);
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("not a SEQB dataset".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let field = |i: usize| {
        let at = 6 + 8 * i;
        u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"))
    };
    let (m, t, d, k) = (field(0), field(1), field(2), field(3));
    let expected = m
        .checked_mul(t)
        .and_then(|v| v.checked_mul(d))
        .and_then(|v| v.checked_mul(8))
        .and_then(|v| v.checked_add(m.checked_mul(4)?))
        .and_then(|v| v.checked_add(HEADER_LEN as u64));
    if expected != Some(bytes.len() as u64) {
        return Err(bad(format!(
            "size {} does not match header M={m} T={t} d={d}",
            bytes.len()
        )));
    }
    let (m, t, d, k) = (m as usize, t as usize, d as usize, k as usize);
    let body = &bytes[HEADER_LEN..];
    let (feat, lab) = body.split_at(m * t * d * 8);
    let features: Vec<f64> = feat
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let labels = lab
        .chunks_exact(4)
        .map(|c| {
            let y = u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize;
            if y == 0 || y > k {
                Err(bad(format!("label {y} outside 1..={k}")))
            } else {
                Ok(y - 1)
            }
        })
        .collect::<CliResult<Vec<_>>>()?;
    let labels = Labels::new(labels, k).map_err(|e| bad(e.to_string()))?;
    SequenceBatch::new(features, t, d, labels).map_err(|e| bad(e.to_string()))
}

pub fn write(path: &Path, batch: &SequenceBatch) -> CliResult<String> {
    let bytes = encode(batch);
    std::fs::write(path, &bytes).map_err(|e| CliError::io(path, e))?;
    Ok(digest(&bytes))
}

pub fn read(path: &Path) -> CliResult<SequenceBatch> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}

/// Lowercase hex SHA-256.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
