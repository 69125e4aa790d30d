//! `SMAE1` array container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SMAE1" | u64 header_len | header_len bytes of JSON | data
//! ```
//!
//! The JSON header is
//! `{"metadata": <any>, "tensors": {name: {"dtype", "shape", "offset"}}}`
//! with `offset` counted in bytes from the start of the data section.
//! Tensors are laid out back to back in name order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 5] = b"SMAE1";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    #[default]
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    metadata: Value,
    tensors: BTreeMap<String, Entry>,
}

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub metadata: Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(metadata: Value) -> Self {
        Checkpoint {
            metadata,
            tensors: BTreeMap::new(),
        }
    }

    pub fn from_params(metadata: Value, params: &ParamStore) -> Self {
        let mut ck = Checkpoint::new(metadata);
        for p in params.iter() {
            ck.tensors.insert(p.name.clone(), p.value.clone());
        }
        ck
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    /// Copies every stored tensor whose name matches a parameter, checking shapes.
    /// Returns the parameter names that had no stored value.
    pub fn load_into(
        &self,
        params: &mut ParamStore,
        skip: impl Fn(&str) -> bool,
    ) -> Result<Vec<String>> {
        let mut missing = Vec::new();
        for p in params.iter_mut() {
            if skip(&p.name) {
                continue;
            }
            match self.tensors.get(&p.name) {
                Some(t) if t.shape() == p.value.shape() => p.value = t.clone(),
                Some(t) => {
                    return Err(Error::Checkpoint(format!(
                        "{}: stored shape {:?}, model expects {:?}",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    )))
                }
                None => missing.push(p.name.clone()),
            }
        }
        Ok(missing)
    }

    pub fn to_bytes(&self, dtype: DType) -> Result<Vec<u8>> {
        let mut tensors = BTreeMap::new();
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            tensors.insert(
                name.clone(),
                Entry {
                    dtype,
                    shape: t.shape().to_vec(),
                    offset,
                },
            );
            offset += (t.len() * dtype.width()) as u64;
        }
        let header = serde_json::to_vec(&Header {
            metadata: self.metadata.clone(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(13 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for &x in t.data() {
                match dtype {
                    DType::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                    DType::F64 => out.extend_from_slice(&x.to_le_bytes()),
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 13 || &bytes[..5] != MAGIC {
            return Err(Error::Checkpoint("missing SMAE1 magic".into()));
        }
        let hlen = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let data_start = 13usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[13..data_start])?;
        let data = &bytes[data_start..];
        let mut tensors = BTreeMap::new();
        for (name, e) in header.tensors {
            let n: usize = e.shape.iter().product();
            let w = e.dtype.width();
            let start = e.offset as usize;
            let end = start + n * w;
            if end > data.len() {
                return Err(Error::Checkpoint(format!("{name}: data out of range")));
            }
            let values = data[start..end]
                .chunks_exact(w)
                .map(|c| match e.dtype {
                    DType::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                    DType::F64 => f64::from_le_bytes(c.try_into().unwrap()),
                })
                .collect();
            tensors.insert(name, Tensor::new(e.shape, values)?);
        }
        Ok(Checkpoint {
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, dtype: DType) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes(dtype)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_stable() {
        let mut ck = Checkpoint::new(serde_json::json!({"variant": "toy"}));
        ck.insert("b", Tensor::new([2], vec![1.0, 2.0]).unwrap());
        ck.insert("a", Tensor::new([1], vec![0.5]).unwrap());
        let bytes = ck.to_bytes(DType::F32).unwrap();
        assert_eq!(&bytes[..5], b"SMAE1");
        let hlen = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let header: Value = serde_json::from_slice(&bytes[13..13 + hlen]).unwrap();
        assert_eq!(header["tensors"]["a"]["offset"], 0);
        assert_eq!(header["tensors"]["b"]["offset"], 4);
        assert_eq!(header["tensors"]["b"]["dtype"], "f32");
        assert_eq!(&bytes[13 + hlen..13 + hlen + 4], &0.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 13 + hlen + 12);
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(Checkpoint::from_bytes(b"SMAE2\0\0\0\0\0\0\0\0").is_err());
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_exact(values in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let mut ck = Checkpoint::new(Value::Null);
            ck.insert("x", Tensor::new([values.len()], values.clone()).unwrap());
            let back = Checkpoint::from_bytes(&ck.to_bytes(DType::F64).unwrap()).unwrap();
            prop_assert_eq!(back.get("x").unwrap().data(), values.as_slice());
        }
    }
}
