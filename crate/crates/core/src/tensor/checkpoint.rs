//! Flat parameter archive.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "SEMUNIT\0"
//! version    u32
//! precision  u8       4 = f32, 8 = f64
//! count      u32
//! count x {
//!     name_len u32, name utf-8,
//!     rank u32, dims u64 x rank,
//!     values (precision bytes each, row-major)
//! }
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{ParamStore, Precision, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"SEMUNIT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error("unknown precision tag {0}")]
    PrecisionTag(u8),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint entry {name}: {reason}")]
    Entry { name: String, reason: String },
}

pub fn encode<F: Real>(store: &ParamStore<F>) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + store.num_scalars() * F::PRECISION.bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(F::PRECISION.bytes() as u8);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            x.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decodes an archive, converting values to `F` if the stored precision
/// differs. Returns the stored precision alongside the parameters.
pub fn decode<F: Real>(buf: &[u8]) -> Result<(Precision, ParamStore<F>), CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let precision = match r.take(1)?[0] {
        4 => Precision::F32,
        8 => Precision::F64,
        other => return Err(CheckpointError::PrecisionTag(other)),
    };
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| CheckpointError::Entry {
                name: "?".into(),
                reason: e.to_string(),
            })?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * precision.bytes())?;
        let data: Vec<F> = match precision {
            Precision::F32 => raw
                .chunks_exact(4)
                .map(|c| F::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            Precision::F64 => raw
                .chunks_exact(8)
                .map(|c| F::of(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Entry {
            name: name.clone(),
            reason: e.to_string(),
        })?;
        if store.id(&name).is_some() {
            return Err(CheckpointError::Entry {
                name,
                reason: "duplicate name".into(),
            });
        }
        store.insert(name, t);
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::Entry {
            name: "<trailer>".into(),
            reason: "trailing bytes".into(),
        });
    }
    Ok((precision, store))
}

pub fn save<F: Real>(store: &ParamStore<F>, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, encode(store))?;
    Ok(())
}

pub fn load<F: Real>(path: &Path) -> Result<(Precision, ParamStore<F>), CheckpointError> {
    decode(&fs::read(path)?)
}
