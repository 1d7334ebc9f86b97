//! File formats: interaction lists and binary feature files.
//!
//! Interaction files are UTF-8 text with one `user<TAB>item` pair per line,
//! 0-based ids; lines starting with `#` and blank lines are skipped.
//!
//! Feature files are little-endian: the magic `MMFT0001`, `u64` rows, `u64`
//! dim, then `rows·dim` `f32` values in row-major order. Row `i` belongs to
//! item `i`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"MMFT0001";
const FEATURE_HEADER: usize = 24;

/// Writes to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    let bytes = read(path)?;
    String::from_utf8(bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: format!("not valid UTF-8 at byte {}", e.utf8_error().valid_up_to()),
    })
}

/// Parses interaction text. `path` is only used in error messages.
pub fn parse_interactions(text: &str, path: &Path) -> Result<Vec<(usize, usize)>> {
    let pairs = parse_pairs(text, path)?;
    if pairs.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no interactions".into(),
        });
    }
    Ok(pairs)
}

fn parse_pairs(text: &str, path: &Path) -> Result<Vec<(usize, usize)>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(u), Some(i), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(idx + 1, format!("expected `user<TAB>item`, got `{line}`")));
        };
        let id = |s: &str, what: &str| {
            let s = s.trim();
            if s.starts_with('-') {
                return Err(parse_err(idx + 1, format!("negative {what} id `{s}`")));
            }
            s.parse::<usize>()
                .map_err(|_| parse_err(idx + 1, format!("{what} id `{s}` is not a non-negative integer")))
        };
        pairs.push((id(u, "user")?, id(i, "item")?));
    }
    Ok(pairs)
}

pub fn load_interactions(path: &Path) -> Result<Vec<(usize, usize)>> {
    parse_interactions(&read_text(path)?, path)
}

/// Like [`load_interactions`] but an empty file is allowed.
pub(crate) fn load_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    parse_pairs(&read_text(path)?, path)
}

pub fn format_interactions(pairs: &[(usize, usize)]) -> String {
    let mut out = String::with_capacity(pairs.len() * 8);
    for (u, i) in pairs {
        let _ = writeln!(out, "{u}\t{i}");
    }
    out
}

pub fn write_interactions(path: &Path, pairs: &[(usize, usize)]) -> Result<()> {
    write_atomic(path, format_interactions(pairs).as_bytes())
}

/// Encodes features, narrowing to `f32`.
pub fn encode_features(features: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(FEATURE_HEADER + features.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(features.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(features.cols() as u64).to_le_bytes());
    for &x in features.as_slice() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

/// Decodes a feature file, checking the row count when `expected_items` is
/// given.
pub fn decode_features(bytes: &[u8], expected_items: Option<usize>, path: &Path) -> Result<Matrix> {
    let fail = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    if bytes.len() < FEATURE_HEADER {
        return Err(fail(format!("header truncated: {} bytes", bytes.len())));
    }
    if &bytes[..8] != FEATURE_MAGIC {
        return Err(fail("bad magic, not an MMFT feature file".into()));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let dim = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let payload = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| fail(format!("{rows}x{dim} payload overflows")))?;
    let actual = bytes.len() - FEATURE_HEADER;
    if actual != payload {
        return Err(fail(format!(
            "payload is {actual} bytes, {rows}x{dim} needs {payload}"
        )));
    }
    let (rows, dim) = (rows as usize, dim as usize);
    if let Some(expected) = expected_items {
        if rows != expected {
            return Err(fail(format!("{rows} rows, expected {expected} items")));
        }
    }
    let data = bytes[FEATURE_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Matrix::from_vec(rows, dim, data)
}

pub fn load_features(path: &Path, expected_items: Option<usize>) -> Result<Matrix> {
    decode_features(&read(path)?, expected_items, path)
}

pub fn write_features(path: &Path, features: &Matrix) -> Result<()> {
    write_atomic(path, &encode_features(features))
}
