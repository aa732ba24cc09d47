//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "AFTCKPT\0"
//! version    u32       1
//! arch_hash  u64       FNV-1a 64 of the architecture name
//! count      u32       number of records
//! record*    path_len u32, path utf-8 bytes, ndim u32, dims u64 * ndim,
//!            values f64 * prod(dims)
//! checksum   u64       FNV-1a 64 of every preceding byte
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::numkernel::{fnv1a64, NdArray, ParamStore};

pub const MAGIC: &[u8; 8] = b"AFTCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch_hash: u64,
    pub records: Vec<(String, NdArray)>,
}

pub fn arch_hash(name: &str) -> u64 {
    fnv1a64(name.as_bytes())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new(arch_name: &str) -> Self {
        Self {
            arch_hash: arch_hash(arch_name),
            records: Vec::new(),
        }
    }

    /// Snapshot of every parameter (including buffers) in store order.
    pub fn from_store(arch_name: &str, store: &ParamStore) -> Self {
        Self {
            arch_hash: arch_hash(arch_name),
            records: store.iter().map(|(_, path, p)| (path.to_string(), p.value.clone())).collect(),
        }
    }

    /// Errors unless the checkpoint was written for `arch_name`.
    pub fn check_arch(&self, arch_name: &str) -> Result<()> {
        if self.arch_hash != arch_hash(arch_name) {
            return Err(Error::Checkpoint(format!(
                "architecture hash {:016x} does not match `{arch_name}`",
                self.arch_hash
            )));
        }
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&NdArray> {
        self.records.iter().find(|(p, _)| p == path).map(|(_, v)| v)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.arch_hash.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for (path, value) in &self.records {
            out.extend_from_slice(&(path.len() as u32).to_le_bytes());
            out.extend_from_slice(path.as_bytes());
            out.extend_from_slice(&(value.ndim() as u32).to_le_bytes());
            for d in value.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        if fnv1a64(body) != stored {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let arch_hash = r.u64("arch hash")?;
        let count = r.u32("record count")? as usize;
        let mut records = Vec::with_capacity(count.min(1 << 16));
        for i in 0..count {
            let len = r.u32("path length")? as usize;
            let path = std::str::from_utf8(r.take(len, "path")?)
                .map_err(|_| Error::Checkpoint(format!("record {i}: path is not utf-8")))?
                .to_string();
            let ndim = r.u32("ndim")? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(r.u64("dimension")? as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.ok_or_else(|| Error::Checkpoint(format!("record `{path}`: shape overflows")))?;
            let raw = r.take(numel.saturating_mul(8), "values")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let value = NdArray::new(shape, data).map_err(|e| Error::Checkpoint(format!("record `{path}`: {e}")))?;
            records.push((path, value));
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self { arch_hash, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Copies matching records into `store`. Every store parameter selected
    /// by `wanted` must be present with the same shape.
    pub fn load_into(&self, store: &mut ParamStore, mut wanted: impl FnMut(&str) -> bool) -> Result<()> {
        let mut missing = Vec::new();
        let mut mismatched = Vec::new();
        let ids: Vec<_> = store.iter().map(|(id, path, _)| (id, path.to_string())).collect();
        for (id, path) in ids {
            if !wanted(&path) {
                continue;
            }
            match self.get(&path) {
                None => missing.push(path),
                Some(v) if v.shape() != store.get(id).value.shape() => {
                    mismatched.push(format!("{path} {:?} vs {:?}", v.shape(), store.get(id).value.shape()))
                }
                Some(v) => store.get_mut(id).value = v.clone(),
            }
        }
        if !mismatched.is_empty() {
            return Err(Error::Checkpoint(format!("shape mismatch: {}", mismatched.join("; "))));
        }
        if !missing.is_empty() {
            return Err(Error::Checkpoint(format!("missing parameters: {}", missing.join(", "))));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            arch_hash: arch_hash("mini18"),
            records: vec![
                ("a.weight".into(), NdArray::from_vec(&[2, 1], vec![1.5, -0.25])),
                ("b".into(), NdArray::scalar(f64::MIN_POSITIVE)),
            ],
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn corruption_detected() {
        let bytes = sample().to_bytes();
        let mut flipped = bytes.clone();
        flipped[30] ^= 1;
        assert!(Checkpoint::from_bytes(&flipped).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage!garbage!").is_err());
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), arch_hash("mini18"));
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
    }
}
