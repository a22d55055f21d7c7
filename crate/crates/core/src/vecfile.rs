//! `*.vec` files: a 16-byte header followed by row-major little-endian `f32`.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CIMV"
//!      4     4  version (u32 LE) = 1
//!      8     4  dim     (u32 LE)
//!     12     4  count   (u32 LE)
//!     16     *  count × dim × f32 LE
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{CimError, Result};

pub const MAGIC: &[u8; 4] = b"CIMV";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

/// A decoded `*.vec` file. `payload` keeps the raw bytes after the header so
/// callers can hash exactly what was on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct VecFile {
    pub dim: usize,
    pub count: usize,
    pub values: Vec<f32>,
    pub payload: Vec<u8>,
}

impl VecFile {
    pub fn row(&self, i: usize) -> Option<&[f32]> {
        if i >= self.count {
            return None;
        }
        Some(&self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.dim.max(1)).take(self.count)
    }
}

pub fn decode(bytes: &[u8]) -> Result<VecFile> {
    if bytes.len() < HEADER_LEN {
        return Err(CimError::Format(format!(
            "vec file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(CimError::Format(format!("bad magic {:?}", &bytes[0..4])));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(CimError::Format(format!(
            "unsupported vec version {version}"
        )));
    }
    let dim = word(8) as usize;
    let count = word(12) as usize;
    if dim == 0 {
        return Err(CimError::Format("vec dim must be at least 1".into()));
    }
    let expected = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| CimError::Format("vec header size overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(CimError::Format(format!(
            "vec payload is {} bytes, header implies {expected} ({count} rows × {dim} dims)",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(VecFile {
        dim,
        count,
        values,
        payload: payload.to_vec(),
    })
}

pub fn read(path: impl AsRef<Path>) -> Result<VecFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CimError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        CimError::Format(msg) => CimError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Encodes `values` (row-major, `values.len() == count * dim`).
pub fn encode(dim: usize, values: &[f32]) -> Result<Vec<u8>> {
    if dim == 0 || values.len() % dim != 0 {
        return Err(CimError::InvalidParams(format!(
            "{} values do not form rows of dim {dim}",
            values.len()
        )));
    }
    let count = values.len() / dim;
    let too_big = |_| CimError::InvalidParams("vec dimensions exceed u32".into());
    let mut out = Vec::with_capacity(HEADER_LEN + values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(dim).map_err(too_big)?.to_le_bytes());
    out.extend_from_slice(&u32::try_from(count).map_err(too_big)?.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write(path: impl AsRef<Path>, dim: usize, values: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(dim, values)?;
    let mut f = fs::File::create(path).map_err(|e| CimError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CimError::io(path, e))
}
