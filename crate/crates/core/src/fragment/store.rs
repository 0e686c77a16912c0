//! Fragment store file (`PAE1`).
//!
//! ```text
//! magic "PAE1" | version u16 | mode u8 | fragment count u64
//! per fragment: 1024 cells | span count u16 | spans (frame u64, offset u32, length u32)
//! CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{Fragment, FragmentMode, FragmentStore, Span, CELLS};
use crate::{Error, Result};

pub const STORE_MAGIC: &[u8; 4] = b"PAE1";
pub const STORE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 8;
const SPAN_LEN: usize = 16;

pub fn store_to_bytes(store: &FragmentStore) -> Result<Vec<u8>> {
    let spans: usize = store.fragments.iter().map(|f| f.provenance.len()).sum();
    let mut out = Vec::with_capacity(HEADER_LEN + store.len() * (CELLS + 2) + spans * SPAN_LEN + 4);
    out.extend_from_slice(STORE_MAGIC);
    out.extend_from_slice(&STORE_VERSION.to_le_bytes());
    out.push(store.mode.code());
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (i, f) in store.fragments.iter().enumerate() {
        if f.cells.len() != CELLS {
            return Err(Error::Shape(format!(
                "fragment {i} has {} cells",
                f.cells.len()
            )));
        }
        out.extend_from_slice(&f.cells);
        let count = u16::try_from(f.provenance.len())
            .map_err(|_| Error::InvalidParameter(format!("fragment {i} has too many spans")))?;
        out.extend_from_slice(&count.to_le_bytes());
        for s in &f.provenance {
            out.extend_from_slice(&s.frame_index.to_le_bytes());
            out.extend_from_slice(&s.offset.to_le_bytes());
            out.extend_from_slice(&s.length.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn store_from_bytes(bytes: &[u8]) -> Result<FragmentStore> {
    if bytes.len() < HEADER_LEN || &bytes[0..4] != STORE_MAGIC {
        return Err(Error::UnsupportedStore("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != STORE_VERSION {
        return Err(Error::UnsupportedStore(format!("version {version}")));
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::CorruptStore("missing checksum".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::CorruptStore("checksum mismatch".into()));
    }
    let mode = FragmentMode::from_code(body[6])
        .ok_or_else(|| Error::UnsupportedStore(format!("unknown mode {}", body[6])))?;
    let count = u64::from_le_bytes(body[7..15].try_into().unwrap());
    let mut pos = HEADER_LEN;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| Error::CorruptStore("unexpected end of store".into()))?;
        let s = &body[pos..end];
        pos = end;
        Ok(s)
    };
    let mut fragments = Vec::with_capacity((count as usize).min(body.len() / CELLS));
    for _ in 0..count {
        let cells = take(CELLS)?.to_vec();
        let spans = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let raw = take(spans * SPAN_LEN)?;
        let provenance = raw
            .chunks_exact(SPAN_LEN)
            .map(|c| Span {
                frame_index: u64::from_le_bytes(c[0..8].try_into().unwrap()),
                offset: u32::from_le_bytes(c[8..12].try_into().unwrap()),
                length: u32::from_le_bytes(c[12..16].try_into().unwrap()),
            })
            .collect();
        fragments.push(Fragment { cells, provenance });
    }
    if pos != body.len() {
        return Err(Error::CorruptStore("trailing bytes".into()));
    }
    Ok(FragmentStore {
        mode,
        fragments,
        source: String::new(),
        skipped_frames: 0,
    })
}

pub fn write_store(store: &FragmentStore, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, store_to_bytes(store)?)?;
    Ok(())
}

pub fn read_store(path: impl AsRef<Path>) -> Result<FragmentStore> {
    let path = path.as_ref();
    let mut store = store_from_bytes(&fs::read(path)?)?;
    store.source = path.display().to_string();
    Ok(store)
}
