//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "FMPPICKP"
//! version      u32      = 1
//! meta_len     u32      byte length of the metadata block
//! metadata     UTF-8    "key=value\n" lines, sorted by key
//! n_tensors    u32
//! per tensor:
//!   name_len   u32, name UTF-8
//!   dtype      u8       0 = f32, 1 = f64
//!   ndim       u32, dims u64 x ndim
//!   payload    raw little-endian elements, row-major
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FMPPICKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata key {key:?}")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("metadata entry {k:?} is not line-safe")));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        w.write_u32::<LittleEndian>(meta.len() as u32)?;
        w.write_all(meta.as_bytes())?;
        w.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Checkpoint(format!("tensor {:?} shape/data mismatch", t.name)));
            }
            w.write_u32::<LittleEndian>(t.name.len() as u32)?;
            w.write_all(t.name.as_bytes())?;
            w.write_u8(match t.data {
                TensorData::F32(_) => 0,
                TensorData::F64(_) => 1,
            })?;
            w.write_u32::<LittleEndian>(t.shape.len() as u32)?;
            for d in &t.shape {
                w.write_u64::<LittleEndian>(*d as u64)?;
            }
            match &t.data {
                TensorData::F32(v) => v.iter().try_for_each(|x| w.write_f32::<LittleEndian>(*x))?,
                TensorData::F64(v) => v.iter().try_for_each(|x| w.write_f64::<LittleEndian>(*x))?,
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = r.read_u32::<LittleEndian>()? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta = String::from_utf8(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut metadata = BTreeMap::new();
        for line in meta.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("bad metadata line {line:?}")))?;
            metadata.insert(k.to_string(), v.to_string());
        }
        let count = r.read_u32::<LittleEndian>()?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = r.read_u32::<LittleEndian>()? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let dtype = r.read_u8()?;
            let ndim = r.read_u32::<LittleEndian>()? as usize;
            let shape = (0..ndim)
                .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = match dtype {
                0 => TensorData::F32(
                    (0..n)
                        .map(|_| r.read_f32::<LittleEndian>())
                        .collect::<std::io::Result<_>>()?,
                ),
                1 => TensorData::F64(
                    (0..n)
                        .map(|_| r.read_f64::<LittleEndian>())
                        .collect::<std::io::Result<_>>()?,
                ),
                other => return Err(Error::Checkpoint(format!("unknown dtype tag {other}"))),
            };
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Self { metadata, tensors })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_bit_exactly(
            a in proptest::collection::vec(any::<f32>(), 1..40),
            b in proptest::collection::vec(any::<f64>(), 1..40),
            note in "[a-z0-9 ._-]{0,20}",
        ) {
            let mut c = Container::default();
            c.metadata.insert("note".into(), note);
            c.tensors.push(NamedTensor { name: "a".into(), shape: vec![a.len()], data: TensorData::F32(a) });
            c.tensors.push(NamedTensor { name: "b".into(), shape: vec![1, b.len()], data: TensorData::F64(b) });
            let bytes = c.to_bytes().unwrap();
            let back = Container::read_from(bytes.as_slice()).unwrap();
            prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let err = Container::read_from(&b"NOTACKPT\x01\0\0\0"[..]).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }
}
