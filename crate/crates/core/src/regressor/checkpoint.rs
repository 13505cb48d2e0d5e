//! Binary weight checkpoint. All integers little-endian.
//!
//! ```text
//! magic        8 bytes   "HMRCKPT\0"
//! version      u32       1
//! header_len   u32
//! header       JSON      RegressorConfig
//! count        u32       number of tensors
//! per tensor:
//!   name_len   u32, name (UTF-8)
//!   ndim       u32 (always 2), dims u64 x ndim
//!   dtype      u8        4 = f32, 8 = f64
//!   data       rows*cols values, row-major
//! ```
//!
//! Tensors appear in parameter order. Values are stored in the scalar type
//! of the model that wrote them and converted on load.

use std::path::Path;

use super::tape::Tensor;
use super::{Regressor, RegressorConfig, RegressorError};
use crate::scalar::Real;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"HMRCKPT\0";

fn dtype<T: Real>() -> u8 {
    std::mem::size_of::<T>() as u8
}

pub fn checkpoint_to_bytes<T: Real>(model: &Regressor<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let header = serde_json::to_vec(model.config()).expect("config serializes");
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, t) in model.param_names().iter().zip(model.params()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(t.rows as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols as u64).to_le_bytes());
        out.push(dtype::<T>());
        for x in &t.data {
            if dtype::<T>() == 4 {
                out.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RegressorError> {
        if self.bytes.len() - self.pos < n {
            return Err(RegressorError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, RegressorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, RegressorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn checkpoint_from_bytes<T: Real>(bytes: &[u8]) -> Result<Regressor<T>, RegressorError> {
    let bad = |m: String| RegressorError::Checkpoint(m);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(MAGIC.as_slice()) {
        return Err(bad("not a regressor checkpoint".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version} (supported: {CHECKPOINT_VERSION})")));
    }
    let hlen = r.u32()? as usize;
    let config: RegressorConfig =
        serde_json::from_slice(r.take(hlen)?).map_err(|e| bad(format!("config header: {e}")))?;
    let count = r.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| bad("tensor name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()?;
        if ndim != 2 {
            return Err(bad(format!("tensor {name} has {ndim} dimensions, expected 2")));
        }
        let (rows, cols) = (r.u64()? as usize, r.u64()? as usize);
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| bad(format!("tensor {name} is too large")))?;
        let dt = r.take(1)?[0];
        let raw = r.take(n.checked_mul(dt as usize).ok_or_else(|| bad("overflow".into()))?)?;
        let data: Vec<T> = match dt {
            4 => raw
                .chunks_exact(4)
                .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            8 => raw
                .chunks_exact(8)
                .map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            d => return Err(bad(format!("tensor {name} has unknown dtype {d}"))),
        };
        params.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Regressor::from_params(config, params)
}

pub fn save_checkpoint<T: Real>(model: &Regressor<T>, path: impl AsRef<Path>) -> Result<(), RegressorError> {
    let path = path.as_ref();
    crate::dataio::write_atomic(path, &checkpoint_to_bytes(model)).map_err(|e| match e {
        crate::dataio::DataError::Io { path, source } => RegressorError::Io { path, source },
        other => RegressorError::Checkpoint(other.to_string()),
    })
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Regressor<T>, RegressorError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| RegressorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint_from_bytes(&bytes)
}
