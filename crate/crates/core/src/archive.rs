//! The PWAR tensor archive: named, shaped, row-major `f32` tensors in one file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes   "PWAR"
//! version      u32       1
//! count        u32       number of entries
//! entries      count ×   name_len u32 | name (UTF-8) | rank u32 |
//!                        dims rank × u64 | dtype u8 (0 = f32 LE) | offset u64
//! payload      row-major floats; each entry's `offset` is absolute from file start
//! ```
//!
//! The writer packs payloads contiguously in entry order directly after the
//! header. The reader accepts any non-overlapping placement inside the file.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PWAR";
pub const VERSION: u32 = 1;
pub const DTYPE_F32_LE: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorArchive {
    entries: Vec<TensorEntry>,
    index: HashMap<String, usize>,
}

impl TensorArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::schema(
                name,
                format!("shape {:?} needs {} values, got {}", dims, numel, data.len()),
            ));
        }
        if self.index.contains_key(&name) {
            return Err(Error::Format(format!("duplicate tensor name `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(TensorEntry { name, dims, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[TensorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header_len: usize = 12
            + self
                .entries
                .iter()
                .map(|e| 4 + e.name.len() + 4 + 8 * e.dims.len() + 1 + 8)
                .sum::<usize>();
        let payload_len: usize = self.entries.iter().map(|e| 4 * e.data.len()).sum();
        let mut out = Vec::with_capacity(header_len + payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut offset = header_len as u64;
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for &d in &e.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.push(DTYPE_F32_LE);
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * e.data.len() as u64;
        }
        debug_assert_eq!(out.len(), header_len);
        for e in &self.entries {
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut headers = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("tensor name is not valid UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut dims = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                let d = r.u64()?;
                dims.push(usize::try_from(d).map_err(|_| Error::schema(&name, "dimension too large"))?);
            }
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32_LE {
                return Err(Error::schema(name, format!("unknown dtype tag {dtype}")));
            }
            let offset = r.u64()?;
            headers.push((name, dims, offset));
        }

        let header_end = r.pos as u64;
        let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(headers.len());
        for (name, dims, offset) in &headers {
            let numel = dims
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
                .ok_or_else(|| Error::schema(name.as_str(), "element count overflows"))?;
            let end = numel
                .checked_mul(4)
                .and_then(|n| offset.checked_add(n))
                .ok_or_else(|| Error::schema(name.as_str(), "payload size overflows"))?;
            if *offset < header_end || end > bytes.len() as u64 {
                return Err(Error::schema(
                    name.as_str(),
                    format!("payload [{offset}, {end}) outside file of {} bytes", bytes.len()),
                ));
            }
            spans.push((*offset, end, name.as_str()));
        }
        spans.sort_unstable();
        for w in spans.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Format(format!(
                    "payloads of `{}` and `{}` overlap",
                    w[0].2, w[1].2
                )));
            }
        }

        let mut archive = TensorArchive::new();
        for (name, dims, offset) in headers {
            let numel: usize = dims.iter().product();
            let start = offset as usize;
            let data = bytes[start..start + 4 * numel]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            archive.insert(name, dims, data)?;
        }
        Ok(archive)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated header at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TensorArchive {
        let mut a = TensorArchive::new();
        a.insert("w", vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, 7.25]).unwrap();
        a.insert("b", vec![3], vec![0.5, 0.25, -0.125]).unwrap();
        a
    }

    #[test]
    fn byte_layout_is_fixed() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[0..4], b"PWAR");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        // first entry: name_len=1, "w", rank=2, dims 2 and 3, dtype 0, offset
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(bytes[16], b'w');
        assert_eq!(u32::from_le_bytes(bytes[17..21].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[21..29].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[29..37].try_into().unwrap()), 3);
        assert_eq!(bytes[37], 0);
        let header_len = 12 + (4 + 1 + 4 + 16 + 1 + 8) + (4 + 1 + 4 + 8 + 1 + 8);
        assert_eq!(u64::from_le_bytes(bytes[38..46].try_into().unwrap()), header_len as u64);
        assert_eq!(bytes.len(), header_len + 4 * 9);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = sample();
        let b = TensorArchive::from_bytes(&a.to_bytes()).unwrap();
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.dims, y.dims);
            let xb: Vec<u32> = x.data.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u32> = y.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = sample().to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_bad_version() {
        let mut bytes = sample().to_bytes();
        bytes[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_truncated_payload() {
        let bytes = sample().to_bytes();
        let err = TensorArchive::from_bytes(&bytes[..bytes.len() - 2]).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }), "{err}");
    }

    #[test]
    fn rejects_overlapping_payloads() {
        let mut bytes = sample().to_bytes();
        // point the second entry at the first entry's payload
        let first_offset = bytes[38..46].to_vec();
        let second_offset_at = 46 + 4 + 1 + 4 + 8 + 1;
        bytes[second_offset_at..second_offset_at + 8].copy_from_slice(&first_offset);
        assert!(matches!(TensorArchive::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_duplicate_names() {
        let mut a = sample();
        assert!(a.insert("w", vec![1], vec![0.0]).is_err());
    }
}
