//! Codes extracted from fragment windows and their file format (`PAEC`).
//!
//! ```text
//! magic "PAEC" | count u64 | n u16
//! per code: 64 f32 | provenance count u32 | frame indices u64[count]
//! ```

use std::fs;
use std::path::Path;

use pcapae_nn::Tensor;
use rayon::prelude::*;

use super::train::store_tensors;
use super::AutoEncoder;
use crate::fragment::{windows, FragmentStore};
use crate::{Error, Result};

pub const CODE_MAGIC: &[u8; 4] = b"PAEC";
pub const CODE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Code {
    /// Channel-major 4×4×4 hidden state.
    pub values: Vec<f32>,
    /// Sorted, de-duplicated frame indices of the window's fragments.
    pub provenance: Vec<u64>,
}

/// Codes in window order; code `i` covers fragments `i..i + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeSet {
    pub n: usize,
    pub codes: Vec<Code>,
}

impl CodeSet {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Codes widened to `f64` feature vectors.
    pub fn features(&self) -> Vec<Vec<f64>> {
        self.codes
            .iter()
            .map(|c| c.values.iter().map(|&v| v as f64).collect())
            .collect()
    }
}

/// Encodes every stride-1 window of `store` with dropout disabled.
pub fn compress(model: &AutoEncoder<f32>, store: &FragmentStore, n: usize) -> Result<CodeSet> {
    let wins = windows(store.len(), n)?;
    if wins.is_empty() {
        return Err(Error::InsufficientData(format!(
            "{} fragments cannot form a window of {n}",
            store.len()
        )));
    }
    let tensors = store_tensors(store);
    let codes = wins
        .par_iter()
        .map(|w| {
            let code: Tensor<f32> = model.encode(&tensors[w.range()])?;
            Ok(Code {
                values: code.into_data(),
                provenance: store.window_frames(*w).into_iter().collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CodeSet { n, codes })
}

pub fn codes_to_bytes(set: &CodeSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CODE_MAGIC);
    out.extend_from_slice(&(set.codes.len() as u64).to_le_bytes());
    let n = u16::try_from(set.n)
        .map_err(|_| Error::InvalidParameter(format!("n = {} too large", set.n)))?;
    out.extend_from_slice(&n.to_le_bytes());
    for (i, c) in set.codes.iter().enumerate() {
        if c.values.len() != CODE_LEN {
            return Err(Error::Shape(format!(
                "code {i} has {} values",
                c.values.len()
            )));
        }
        c.values
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        out.extend_from_slice(&(c.provenance.len() as u32).to_le_bytes());
        c.provenance
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    Ok(out)
}

pub fn codes_from_bytes(bytes: &[u8]) -> Result<CodeSet> {
    let mut pos = 0usize;
    let mut take = |len: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::CorruptStore("code dataset ends early".into()))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4).map_err(|_| Error::UnsupportedStore("bad code dataset magic".into()))? != CODE_MAGIC
    {
        return Err(Error::UnsupportedStore("bad code dataset magic".into()));
    }
    let count = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
    let n = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
    let mut codes = Vec::with_capacity(count.min(bytes.len() / (CODE_LEN * 4)));
    for _ in 0..count {
        let values = take(CODE_LEN * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let m = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let provenance = take(
            m.checked_mul(8)
                .ok_or_else(|| Error::CorruptStore("provenance overflow".into()))?,
        )?
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
        codes.push(Code { values, provenance });
    }
    if pos != bytes.len() {
        return Err(Error::CorruptStore("trailing bytes after codes".into()));
    }
    Ok(CodeSet { n, codes })
}

pub fn write_codes(set: &CodeSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, codes_to_bytes(set)?)?;
    Ok(())
}

pub fn read_codes(path: impl AsRef<Path>) -> Result<CodeSet> {
    codes_from_bytes(&fs::read(path)?)
}
