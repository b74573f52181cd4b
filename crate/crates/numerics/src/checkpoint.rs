//! Versioned tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "MDIFFCKP"
//! version      u32      = 1
//! meta_count   u32
//!   key_len u32, key utf-8, value_len u32, value utf-8      (meta_count times)
//! tensor_count u32
//!   name_len u32, name utf-8, dtype u8 (0 = f64), rank u32,
//!   dims u64 × rank, offset u64                              (tensor_count times)
//! data         raw little-endian values; offsets are relative to the
//!              first byte after the index and multiples of the dtype size
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{NumericsError, Result};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MDIFFCKP";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;
const MAX_RANK: u32 = 8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: IndexMap<String, Tensor>,
}

fn fmt_err(msg: impl Into<String>) -> NumericsError {
    NumericsError::Format(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| fmt_err(format!("truncated: need {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| fmt_err("string is not utf-8"))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_store(store: &ParameterStore) -> Self {
        let tensors = store.iter().map(|(k, t)| (k.to_string(), t.clone())).collect();
        Self { meta: BTreeMap::new(), tensors }
    }

    /// Copies every tensor into `store`: existing names are overwritten
    /// (shape must match), new names are inserted.
    pub fn load_into(&self, store: &mut ParameterStore) -> Result<()> {
        for (name, t) in &self.tensors {
            match store.get(name) {
                Some(old) if old.shape() != t.shape() => {
                    return Err(fmt_err(format!("shape of `{name}` is {:?} in checkpoint but {:?} in model", t.shape(), old.shape())))
                }
                Some(_) => store.set(name, t.clone())?,
                None => store.insert(name.clone(), t.clone())?,
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            for s in [k, v] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 8 * t.len() as u64;
        }
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(fmt_err(format!("unsupported version {version}")));
        }
        let mut meta = BTreeMap::new();
        let n_meta = r.u32()?;
        for _ in 0..n_meta {
            let k = r.string()?;
            let v = r.string()?;
            if meta.insert(k.clone(), v).is_some() {
                return Err(fmt_err(format!("duplicate meta key `{k}`")));
            }
        }
        let n_tensors = r.u32()? as usize;
        let mut index = Vec::new();
        for _ in 0..n_tensors {
            let name = r.string()?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F64 {
                return Err(fmt_err(format!("unsupported dtype {dtype} for `{name}`")));
            }
            let rank = r.u32()?;
            if rank > MAX_RANK {
                return Err(fmt_err(format!("rank {rank} too large for `{name}`")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            let mut count: u64 = 1;
            for _ in 0..rank {
                let d = r.u64()?;
                count = count.checked_mul(d).ok_or_else(|| fmt_err("element count overflows"))?;
                shape.push(usize::try_from(d).map_err(|_| fmt_err("dimension too large"))?);
            }
            let offset = r.u64()?;
            if offset % 8 != 0 {
                return Err(fmt_err(format!("misaligned offset for `{name}`")));
            }
            index.push((name, shape, count, offset));
        }
        let data = &buf[r.pos..];
        let mut tensors = IndexMap::new();
        for (name, shape, count, offset) in index {
            let bytes = count.checked_mul(8).ok_or_else(|| fmt_err("byte count overflows"))?;
            let end = offset.checked_add(bytes).ok_or_else(|| fmt_err("offset overflows"))?;
            if end > data.len() as u64 {
                return Err(fmt_err(format!("data for `{name}` runs past end of file")));
            }
            let slice = &data[offset as usize..end as usize];
            let values = slice.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, values)?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(fmt_err(format!("duplicate tensor `{name}`")));
            }
        }
        let _ = r.remaining();
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
