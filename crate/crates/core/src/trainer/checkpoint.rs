//! Binary checkpoints.
//!
//! Layout (little-endian): the magic `MGNM0001`, the 8-byte config hash, then
//! tensor records until end of file. A record is a `u32` name length, the
//! UTF-8 name, `u64` rows, `u64` cols and `rows·cols` `f64` values.
//! Parameters are stored as `param/<name>`, Adam moments as `adam.m/<name>`
//! and `adam.v/<name>`, and the Adam step as the 1×1 record `adam.step`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::model::ParameterSet;

use super::OptimizerState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MGNM0001";

const PARAM: &str = "param/";
const FIRST: &str = "adam.m/";
const SECOND: &str = "adam.v/";
const STEP: &str = "adam.step";

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub params: ParameterSet,
    pub optimizer: OptimizerState,
}

fn push_record(out: &mut Vec<u8>, name: &str, m: &Matrix) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for x in m.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_checkpoint(params: &ParameterSet, optimizer: &OptimizerState, config_hash: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&config_hash.to_le_bytes());
    for (name, m) in params.tensors() {
        push_record(&mut out, &format!("{PARAM}{name}"), m);
    }
    for (name, m) in &optimizer.first {
        push_record(&mut out, &format!("{FIRST}{name}"), m);
    }
    for (name, m) in &optimizer.second {
        push_record(&mut out, &format!("{SECOND}{name}"), m);
    }
    push_record(&mut out, STEP, &Matrix::scalar(optimizer.step as f64));
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn decode_inner(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| "file too short".to_string())? != CHECKPOINT_MAGIC {
        return Err("bad magic, not an MGNM checkpoint".into());
    }
    let config_hash = r.u64()?;
    let mut records: BTreeMap<String, Matrix> = BTreeMap::new();
    while r.pos < bytes.len() {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| format!("record name at byte {} is not UTF-8", r.pos - len))?
            .to_string();
        let rows = usize::try_from(r.u64()?).map_err(|_| "row count overflows".to_string())?;
        let cols = usize::try_from(r.u64()?).map_err(|_| "column count overflows".to_string())?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| format!("record `{name}` is too large"))?;
        let data = r
            .take(n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if records.insert(name.clone(), Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())?).is_some() {
            return Err(format!("duplicate record `{name}`"));
        }
    }

    let mut params = BTreeMap::new();
    let mut first = BTreeMap::new();
    let mut second = BTreeMap::new();
    let mut step = None;
    for (name, m) in records {
        if let Some(k) = name.strip_prefix(PARAM) {
            params.insert(k.to_string(), m);
        } else if let Some(k) = name.strip_prefix(FIRST) {
            first.insert(k.to_string(), m);
        } else if let Some(k) = name.strip_prefix(SECOND) {
            second.insert(k.to_string(), m);
        } else if name == STEP && m.shape() == (1, 1) {
            let s = m.as_slice()[0];
            if s < 0.0 || s.fract() != 0.0 || s > u64::MAX as f64 {
                return Err(format!("invalid step counter {s}"));
            }
            step = Some(s as u64);
        } else {
            return Err(format!("unexpected record `{name}`"));
        }
    }
    let params = ParameterSet::from_tensors(params);
    let optimizer = OptimizerState {
        first,
        second,
        step: step.ok_or("missing optimizer step")?,
    };
    optimizer.check_against(&params).map_err(|e| e.to_string())?;
    Ok(Checkpoint {
        config_hash,
        params,
        optimizer,
    })
}

/// Parses checkpoint bytes without checking the config hash.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    decode_inner(bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

/// Writes a checkpoint atomically.
pub fn save_checkpoint(
    path: &Path,
    params: &ParameterSet,
    optimizer: &OptimizerState,
    config_hash: u64,
) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params, optimizer, config_hash))
}

/// Reads a checkpoint and checks it was written under `expected_hash`.
pub fn load_checkpoint(path: &Path, expected_hash: u64) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = decode_checkpoint(&bytes, path)?;
    if ckpt.config_hash != expected_hash {
        return Err(Error::ConfigHashMismatch {
            expected: expected_hash,
            found: ckpt.config_hash,
        });
    }
    Ok(ckpt)
}
