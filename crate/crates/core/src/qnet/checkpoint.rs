//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "VNAS" | u32 version | u32 record count
//! per record, sorted by name:
//!   u32 name length | name (UTF-8) | u32 rank | u64 dims[rank] | f64 data[∏dims]
//! ```

use std::path::Path;

use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VNAS";
pub const CHECKPOINT_VERSION: u32 = 1;

const MAX_RANK: usize = 8;

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + store.num_scalars() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.what, format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.error("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn error(&self, reason: impl Into<String>) -> Error {
        Error::format(self.what, reason)
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    let mut r = Reader::new(bytes, "checkpoint");
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.error("bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.error(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    let mut previous: Option<String> = None;
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.error("parameter name is not UTF-8"))?
            .to_string();
        if previous.as_ref().is_some_and(|p| *p >= name) {
            return Err(r.error(format!("record `{name}` out of order or duplicated")));
        }
        let rank = r.u32()? as usize;
        if rank > MAX_RANK {
            return Err(r.error(format!("rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut len: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(r.u64()?).map_err(|_| r.error("dimension overflow"))?;
            len = len.checked_mul(d).ok_or_else(|| r.error("dimension overflow"))?;
            shape.push(d);
        }
        if len.saturating_mul(8) > r.remaining() {
            return Err(r.error(format!("record `{name}` truncated")));
        }
        let data = r.f64s(len)?;
        store.insert(name.clone(), Tensor::new(&shape, data).map_err(|e| r.error(e.to_string()))?);
        previous = Some(name);
    }
    r.finish()?;
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(store))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    decode_checkpoint(&std::fs::read(path)?)
}
