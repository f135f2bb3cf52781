//! Binary parameter files.
//!
//! Layout (little-endian): `SEAW`, version u32, JSON metadata length u64 and
//! bytes, record count u32, then per record: name length u32, UTF-8 name,
//! rank u32, each extent as u64, and the values as f64.

use std::path::Path;

use serde_json::Value;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::Result;
use crate::fsutil::{self, Reader};

const MAGIC: &[u8; 4] = b"SEAW";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Value,
    pub params: ParamStore,
}

pub fn encode(meta: &Value, params: &ParamStore) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(meta)?;
    let mut out = Vec::with_capacity(24 + json.len() + 8 * params.num_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.tensor.shape().len() as u32).to_le_bytes());
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a checkpoint; every parameter comes back trainable.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, path);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.format_error(format!("unsupported version {version}")));
    }
    let json_len = r.u64()? as usize;
    let meta: Value = serde_json::from_slice(r.take(json_len)?).map_err(|e| r.format_error(e.to_string()))?;
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| r.format_error(e.to_string()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params
            .insert(name, Tensor::new(shape, data)?, true)
            .map_err(|e| r.format_error(e.to_string()))?;
    }
    r.finish()?;
    Ok(Checkpoint { meta, params })
}

pub fn save(path: &Path, meta: &Value, params: &ParamStore) -> Result<()> {
    fsutil::write(path, &encode(meta, params)?)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fsutil::read(path)?, path)
}
