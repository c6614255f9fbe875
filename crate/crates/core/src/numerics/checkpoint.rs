//! MTCK v1 checkpoints.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! b"MTCK" | version=1 | meta_len | meta (UTF-8 JSON) | count |
//!   count × ( name_len | name | ndim | dims… | f32 payload )
//! ```

use std::io::{Read, Write};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MTCK";
pub const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} too large for MTCK")))
}

/// Writes `store` with a JSON metadata string. Values are stored as `f32`.
pub fn write_checkpoint(w: &mut impl Write, meta: &str, store: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, len_u32(meta.len(), "metadata")?)?;
    w.write_all(meta.as_bytes())?;
    put_u32(w, len_u32(store.len(), "parameter count")?)?;
    for (_, e) in store.iter() {
        put_u32(w, len_u32(e.name.len(), "name")?)?;
        w.write_all(e.name.as_bytes())?;
        put_u32(w, len_u32(e.value.shape().len(), "rank")?)?;
        for &d in e.value.shape() {
            put_u32(w, len_u32(d, "dimension")?)?;
        }
        let mut buf = Vec::with_capacity(e.value.len() * 4);
        for &v in e.value.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Reads a checkpoint into its metadata string and a store of trainable
/// parameters in file order.
pub fn read_checkpoint(r: &mut impl Read) -> Result<(String, ParamStore)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not an MTCK checkpoint".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported MTCK version {version}")));
    }
    let meta_len = get_u32(r)? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)?;
    let meta = String::from_utf8(meta).map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
    let count = get_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = get_u32(r)? as usize;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = get_u32(r)? as usize;
        let shape = (0..rank)
            .map(|_| get_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        if store.id(&name).is_some() {
            return Err(Error::Format(format!("duplicate parameter {name}")));
        }
        store.insert(&name, Tensor::new(shape, data)?, true);
    }
    Ok((meta, store))
}
