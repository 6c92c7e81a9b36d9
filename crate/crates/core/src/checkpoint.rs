//! Binary parameter checkpoints.
//!
//! ```text
//! "NHRN"  u16 version  u32 entry count
//! per entry:  u32 name length, UTF-8 name, u32 rank, u32 extent × rank,
//!             f32 × product(extents), row-major
//! ```
//!
//! All integers and floats are little-endian. Entries appear in parameter
//! store order.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::params::{ParamError, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NHRN";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    Magic,
    #[error("unsupported checkpoint version {0} (this build reads {VERSION})")]
    Version(u16),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint has {0} trailing bytes")]
    Trailing(usize),
    #[error("parameter name at byte {0} is not UTF-8")]
    Name(usize),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub fn encode(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + store.scalar_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore<f32>, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| CheckpointError::Magic)? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()?;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| CheckpointError::Name(at))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or(CheckpointError::Truncated(bytes.len()))?;
        let raw = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated(bytes.len()))?)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ParamError::NonFinite(name.to_string()).into());
        }
        let t = Tensor::new(shape, data).map_err(|_| CheckpointError::Truncated(r.pos))?;
        store.insert(name, t)?;
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Trailing(bytes.len() - r.pos));
    }
    Ok(store)
}

pub fn save(store: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    fs::write(path, encode(store)).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore<f32>, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
