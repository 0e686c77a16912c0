//! Fixed 32×32 byte fragments cut from frame streams, with per-cell frame
//! provenance.
//!
//! Byte mode packs the leading bytes of every frame into one rolling stream.
//! Flow mode gives every directional TCP/UDP flow its own fragments of 16
//! packets, each packet contributing 64 bytes starting at its transport
//! header.

mod store;

use std::collections::{BTreeSet, HashMap};

use crate::traffic::packet::flow_key;
use crate::traffic::{FlowKey, RawFrame};
use crate::{Error, Result};

pub use store::{
    read_store, store_from_bytes, store_to_bytes, write_store, STORE_MAGIC, STORE_VERSION,
};

pub const SIDE: usize = 32;
pub const CELLS: usize = SIDE * SIDE;
/// Leading frame bytes used in byte mode.
pub const MAX_FRAME_BYTES: usize = 1024;
pub const FLOW_SLOT_BYTES: usize = 64;
pub const PACKETS_PER_FLOW_FRAGMENT: usize = CELLS / FLOW_SLOT_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FragmentMode {
    Byte,
    Flow,
}

impl FragmentMode {
    pub fn code(self) -> u8 {
        match self {
            FragmentMode::Byte => 0,
            FragmentMode::Flow => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(FragmentMode::Byte),
            1 => Some(FragmentMode::Flow),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FragmentMode::Byte => "byte",
            FragmentMode::Flow => "flow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "byte" => Some(FragmentMode::Byte),
            "flow" => Some(FragmentMode::Flow),
            _ => None,
        }
    }
}

/// A run of bytes `frame.data[offset..offset + length]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub frame_index: u64,
    pub offset: u32,
    pub length: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub cells: Vec<u8>,
    /// In cell order. Byte-mode spans tile a prefix of the grid; flow-mode
    /// span `i` starts at cell `64 i`.
    pub provenance: Vec<Span>,
}

impl Fragment {
    pub fn zeroed() -> Self {
        Fragment {
            cells: vec![0; CELLS],
            provenance: Vec::new(),
        }
    }

    /// Cell values divided by 255.
    pub fn normalized(&self) -> Vec<f32> {
        self.cells.iter().map(|&v| normalize_byte(v)).collect()
    }

    pub fn frame_indices(&self) -> BTreeSet<u64> {
        self.provenance.iter().map(|s| s.frame_index).collect()
    }

    /// Grid position of every span's first cell.
    pub fn span_starts(&self, mode: FragmentMode) -> Vec<usize> {
        match mode {
            FragmentMode::Byte => self
                .provenance
                .iter()
                .scan(0usize, |pos, s| {
                    let start = *pos;
                    *pos += s.length as usize;
                    Some(start)
                })
                .collect(),
            FragmentMode::Flow => (0..self.provenance.len())
                .map(|i| i * FLOW_SLOT_BYTES)
                .collect(),
        }
    }

    /// Frame owning the cell at row-major position `cell`, if any.
    pub fn frame_at(&self, mode: FragmentMode, cell: usize) -> Option<u64> {
        self.span_starts(mode)
            .into_iter()
            .zip(&self.provenance)
            .find(|(start, s)| (*start..*start + s.length as usize).contains(&cell))
            .map(|(_, s)| s.frame_index)
    }
}

pub fn normalize_byte(v: u8) -> f32 {
    v as f32 / 255.0
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentStore {
    pub mode: FragmentMode,
    pub fragments: Vec<Fragment>,
    /// Free-form identifier of the trace the store was cut from. Not
    /// persisted.
    pub source: String,
    /// Frames that did not contribute (flow mode only).
    pub skipped_frames: u64,
}

impl FragmentStore {
    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    /// Union of the frame indices of fragments `start..start + n`.
    pub fn window_frames(&self, w: SequenceWindow) -> BTreeSet<u64> {
        self.fragments[w.start..w.start + w.n]
            .iter()
            .flat_map(|f| f.provenance.iter().map(|s| s.frame_index))
            .collect()
    }
}

pub fn byte_fragments(frames: &[RawFrame]) -> FragmentStore {
    let mut fragments = Vec::new();
    let mut cur = Fragment {
        cells: Vec::with_capacity(CELLS),
        provenance: Vec::new(),
    };
    for f in frames {
        let take = f.data.len().min(MAX_FRAME_BYTES);
        let mut offset = 0;
        while offset < take {
            let room = CELLS - cur.cells.len();
            let len = room.min(take - offset);
            cur.cells.extend_from_slice(&f.data[offset..offset + len]);
            cur.provenance.push(Span {
                frame_index: f.index,
                offset: offset as u32,
                length: len as u32,
            });
            offset += len;
            if cur.cells.len() == CELLS {
                fragments.push(std::mem::replace(
                    &mut cur,
                    Fragment {
                        cells: Vec::with_capacity(CELLS),
                        provenance: Vec::new(),
                    },
                ));
            }
        }
    }
    if !cur.cells.is_empty() {
        cur.cells.resize(CELLS, 0);
        fragments.push(cur);
    }
    FragmentStore {
        mode: FragmentMode::Byte,
        fragments,
        source: String::new(),
        skipped_frames: 0,
    }
}

pub fn flow_fragments(frames: &[RawFrame]) -> FragmentStore {
    let mut bins: HashMap<FlowKey, Fragment> = HashMap::new();
    let mut first_seen: Vec<FlowKey> = Vec::new();
    let mut fragments = Vec::new();
    let mut skipped = 0u64;
    for f in frames {
        let Some((key, ip)) = flow_key(f) else {
            skipped += 1;
            continue;
        };
        let frag = bins.entry(key).or_insert_with(|| {
            first_seen.push(key);
            Fragment::zeroed()
        });
        let (start, end) = ip.payload_range(f.data.len());
        let len = (end - start).min(FLOW_SLOT_BYTES);
        let slot = frag.provenance.len() * FLOW_SLOT_BYTES;
        frag.cells[slot..slot + len].copy_from_slice(&f.data[start..start + len]);
        frag.provenance.push(Span {
            frame_index: f.index,
            offset: start as u32,
            length: len as u32,
        });
        if frag.provenance.len() == PACKETS_PER_FLOW_FRAGMENT {
            fragments.push(std::mem::replace(frag, Fragment::zeroed()));
        }
    }
    for key in first_seen {
        if let Some(frag) = bins.remove(&key) {
            if !frag.provenance.is_empty() {
                fragments.push(frag);
            }
        }
    }
    FragmentStore {
        mode: FragmentMode::Flow,
        fragments,
        source: String::new(),
        skipped_frames: skipped,
    }
}

pub fn fragment(frames: &[RawFrame], mode: FragmentMode) -> FragmentStore {
    match mode {
        FragmentMode::Byte => byte_fragments(frames),
        FragmentMode::Flow => flow_fragments(frames),
    }
}

/// `n` consecutive fragments starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceWindow {
    pub start: usize,
    pub n: usize,
}

impl SequenceWindow {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.n
    }

    pub fn last(&self) -> usize {
        self.start + self.n - 1
    }
}

pub fn windows(len: usize, n: usize) -> Result<Vec<SequenceWindow>> {
    if n < 1 {
        return Err(Error::InvalidParameter(
            "sequence length must be at least 1".into(),
        ));
    }
    Ok((0..(len + 1).saturating_sub(n))
        .map(|start| SequenceWindow { start, n })
        .collect())
}
