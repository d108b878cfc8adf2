//! Named-tensor binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"ACEM"
//! u32    format version (currently 1)
//! u32    entry count
//! entry: u32 name length, UTF-8 name bytes,
//!        u32 ndim, u64 × ndim dims,
//!        f32 × product(dims) payload, row-major
//! ```

use super::{IoError, Result};
use crate::tensor::Tensor;
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"ACEM";
pub const VERSION: u32 = 1;

/// Serialize named tensors. Values are stored as f32; names must be unique.
pub fn write_tensor_file(path: &Path, entries: &[(&str, &Tensor)]) -> Result<()> {
    for (i, (name, _)) in entries.iter().enumerate() {
        if entries[..i].iter().any(|(n, _)| n == name) {
            return Err(IoError::DuplicateName { name: name.to_string() });
        }
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, tensor) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.dims().len() as u32).to_le_bytes());
        for &d in tensor.dims() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(IoError::Truncated { offset: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Read a container back. Rejects bad magic, unknown versions, truncation
/// (with the byte offset where data ran out), and duplicate names.
pub fn read_tensor_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(IoError::BadMagic { found: magic });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(IoError::VersionUnsupported { version });
    }
    let count = cur.u32()? as usize;

    let mut entries: Vec<(String, Tensor)> = Vec::with_capacity(count);
    for _ in 0..count {
        let entry_offset = cur.pos;
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|e| {
            IoError::InvalidEntry { offset: entry_offset, detail: format!("name is not UTF-8: {e}") }
        })?;
        if entries.iter().any(|(n, _)| *n == name) {
            return Err(IoError::DuplicateName { name });
        }
        let ndim = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u64()? as usize);
        }
        let numel: usize = dims.iter().product();
        let payload = cur.take(numel * 4)?;
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let tensor = Tensor::new(dims, data).map_err(|e| IoError::InvalidEntry {
            offset: entry_offset,
            detail: e.to_string(),
        })?;
        entries.push((name, tensor));
    }
    Ok(entries)
}
