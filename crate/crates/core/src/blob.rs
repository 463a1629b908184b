//! Flat tensor container used for parameter snapshots and embedding files.
//!
//! Layout: an 8-byte little-endian header length `n`, then `n` bytes of JSON
//! header, then every tensor's values as little-endian `f64`, back to back.
//! The header lists `{name, shape, offset}` per tensor (offset counted in
//! values from the start of the data section) and a free-form `meta` object.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!(
                "tensor {name}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        Ok(Self { name, shape, data })
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

pub fn encode(tensors: &[NamedTensor], meta: serde_json::Value) -> Result<Vec<u8>> {
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|t| {
            let e = Entry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
            };
            offset += t.data.len();
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        meta,
        tensors: entries,
    })
    .map_err(|e| Error::Format(format!("blob header: {e}")))?;
    let mut out = Vec::with_capacity(8 + header.len() + offset * 8);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Vec<NamedTensor>, serde_json::Value)> {
    let short = || Error::Format("blob truncated".into());
    let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(short)?.try_into().unwrap();
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    let header_bytes = bytes.get(8..8 + hlen).ok_or_else(short)?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Format(format!("blob header: {e}")))?;
    let data = &bytes[8 + hlen..];
    if data.len() % 8 != 0 {
        return Err(Error::Format("blob data length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let slice = values.get(e.offset..e.offset + n).ok_or_else(|| {
            Error::Format(format!("tensor {} extends past end of blob", e.name))
        })?;
        tensors.push(NamedTensor {
            name: e.name,
            shape: e.shape,
            data: slice.to_vec(),
        });
    }
    Ok((tensors, header.meta))
}

pub fn write(path: &Path, tensors: &[NamedTensor], meta: serde_json::Value) -> Result<()> {
    fs::write(path, encode(tensors, meta)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(Vec<NamedTensor>, serde_json::Value)> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(shapes in proptest::collection::vec(proptest::collection::vec(1usize..4, 1..4), 0..4), seed in any::<u64>()) {
            let tensors: Vec<NamedTensor> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let n: usize = s.iter().product();
                    let data = (0..n).map(|k| (seed as f64).sin() * k as f64 - i as f64).collect();
                    NamedTensor::new(format!("t{i}"), s.clone(), data).unwrap()
                })
                .collect();
            let meta = serde_json::json!({"seed": seed});
            let (back, m) = decode(&encode(&tensors, meta.clone()).unwrap()).unwrap();
            prop_assert_eq!(back, tensors);
            prop_assert_eq!(m, meta);
        }
    }

    #[test]
    fn truncated_blob_is_an_error() {
        let t = NamedTensor::new("a", vec![2], vec![1.0, 2.0]).unwrap();
        let bytes = encode(&[t], serde_json::Value::Null).unwrap();
        assert!(decode(&bytes[..bytes.len() - 8]).is_err());
        assert!(decode(&bytes[..4]).is_err());
    }
}
