//! Named-tensor container (`PAEW`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "PAEW" | version u16 | metadata length u32 | metadata (UTF-8 key=value lines)
//! tensor count u32
//! per tensor: name length u16 | name | rank u8 | dims u32[rank] | dtype u8 | raw data
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::{DType, NnError, Result, Tensor};

pub const MAGIC: &[u8; 4] = b"PAEW";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorData {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::F64(t) => t.shape(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        match self {
            TensorData::F32(t) => t.cast(),
            TensorData::F64(t) => t.clone(),
        }
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        match self {
            TensorData::F32(t) => t.clone(),
            TensorData::F64(t) => t.cast(),
        }
    }
}

/// In-memory contents of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<(String, TensorData)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.metadata.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.metadata.push((key, value)),
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorData> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut meta = String::new();
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(NnError::InvalidParameter(format!(
                    "metadata entry {k:?} not representable"
                )));
            }
            meta.push_str(k);
            meta.push('=');
            meta.push_str(v);
            meta.push('\n');
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let name_len = u16::try_from(name.len())
                .map_err(|_| NnError::InvalidParameter(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let shape = t.shape();
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match t {
                TensorData::F32(t) => {
                    out.push(DType::F32.code());
                    t.data()
                        .iter()
                        .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
                }
                TensorData::F64(t) => {
                    out.push(DType::F64.code());
                    t.data()
                        .iter()
                        .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::UnsupportedCheckpoint("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(NnError::UnsupportedCheckpoint(format!("version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| NnError::UnsupportedCheckpoint("metadata is not UTF-8".into()))?;
        let mut metadata = Vec::new();
        for line in meta.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| {
                NnError::UnsupportedCheckpoint(format!("bad metadata line {line:?}"))
            })?;
            metadata.push((k.to_string(), v.to_string()));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| NnError::UnsupportedCheckpoint("tensor name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let dtype = DType::from_code(r.take(1)?[0]).ok_or_else(|| {
                NnError::UnsupportedCheckpoint(format!("unknown dtype in {name}"))
            })?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * dtype.size())?;
            let data = match dtype {
                DType::F32 => TensorData::F32(Tensor::from_vec(
                    &shape,
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )?),
                DType::F64 => TensorData::F64(Tensor::from_vec(
                    &shape,
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )?),
            };
            tensors.push((name, data));
        }
        if r.pos != bytes.len() {
            return Err(NnError::UnsupportedCheckpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { metadata, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| NnError::UnsupportedCheckpoint("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
