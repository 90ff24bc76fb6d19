//! Flat parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"RUDFCKPT"                  8-byte magic
//! u32 version                  currently 1
//! u64 manifest_len
//! manifest_len bytes           UTF-8 JSON manifest
//! f64 data ...                 tensors back to back, in manifest order
//! ```
//!
//! The manifest is `{"tensors": [{"name", "shape", "offset", "len"}], "metadata": {...}}`
//! where `offset` counts f64 values from the start of the data block.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RUDFCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn write_to(mut w: impl Write, params: &ParamStore, metadata: serde_json::Value) -> Result<()> {
    let mut offset = 0;
    let tensors = params
        .ids()
        .map(|id| {
            let t = params.get(id);
            let e = TensorEntry {
                name: params.name(id).to_string(),
                shape: t.shape().to_vec(),
                offset,
                len: t.len(),
            };
            offset += t.len();
            e
        })
        .collect();
    let manifest = serde_json::to_vec(&Manifest { tensors, metadata })?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(manifest.len() as u64).to_le_bytes())?;
    w.write_all(&manifest)?;
    for id in params.ids() {
        for v in params.get(id).data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_from(mut r: impl Read) -> Result<(ParamStore, serde_json::Value)> {
    let parse = |offset: u64, message: &str| Error::Parse {
        offset,
        message: message.to_string(),
    };
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| parse(0, "truncated magic"))?;
    if &magic != MAGIC {
        return Err(parse(0, "bad magic"));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b)
        .map_err(|_| parse(8, "truncated version"))?;
    if u32::from_le_bytes(u32b) != VERSION {
        return Err(parse(8, "unsupported version"));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b)
        .map_err(|_| parse(12, "truncated manifest length"))?;
    let mlen = u64::from_le_bytes(u64b) as usize;
    let mut mbytes = vec![0u8; mlen];
    r.read_exact(&mut mbytes)
        .map_err(|_| parse(20, "truncated manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(&mbytes).map_err(|e| parse(20, &format!("manifest: {e}")))?;
    let data_start = 20 + mlen as u64;
    let mut store = ParamStore::default();
    let mut consumed = 0usize;
    for e in &manifest.tensors {
        if e.offset != consumed || e.shape.len() != 2 || e.shape[0] * e.shape[1] != e.len {
            return Err(parse(data_start, &format!("inconsistent entry {}", e.name)));
        }
        let mut data = Vec::with_capacity(e.len);
        for k in 0..e.len {
            r.read_exact(&mut u64b).map_err(|_| {
                parse(data_start + 8 * (consumed + k) as u64, "truncated tensor data")
            })?;
            data.push(f64::from_le_bytes(u64b));
        }
        consumed += e.len;
        store.add(e.name.clone(), Tensor::from_vec(e.shape[0], e.shape[1], data)?);
    }
    Ok((store, manifest.metadata))
}

pub fn save(path: impl AsRef<Path>, params: &ParamStore, metadata: serde_json::Value) -> Result<()> {
    write_to(BufWriter::new(File::create(path)?), params, metadata)
}

pub fn load(path: impl AsRef<Path>) -> Result<(ParamStore, serde_json::Value)> {
    read_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::default();
        store.add("a", Tensor::from_vec(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap());
        store.add("b.weight", Tensor::row(&[std::f64::consts::PI]));
        let meta = serde_json::json!({"d": 64});
        let mut buf = Vec::new();
        write_to(&mut buf, &store, meta.clone()).unwrap();
        let (back, m) = read_from(buf.as_slice()).unwrap();
        assert_eq!(m, meta);
        for id in store.ids() {
            assert_eq!(store.name(id), back.name(id));
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(store.get(id)), bits(back.get(id)));
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let mut store = ParamStore::default();
        store.add("a", Tensor::row(&[1.0, 2.0]));
        let mut buf = Vec::new();
        write_to(&mut buf, &store, serde_json::Value::Null).unwrap();
        buf.truncate(buf.len() - 3);
        match read_from(buf.as_slice()) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 20),
            other => panic!("{other:?}"),
        }
    }
}
