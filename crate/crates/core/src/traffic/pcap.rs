//! Classic libpcap reader and writer (microsecond timestamps, Ethernet).

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::{RawFrame, ETHERNET_HEADER_LEN};
use crate::{Error, Result};

pub const MAGIC: u32 = 0xa1b2_c3d4;
pub const MAGIC_SWAPPED: u32 = 0xd4c3_b2a1;
pub const LINKTYPE_ETHERNET: u32 = 1;
pub const GLOBAL_HEADER_LEN: usize = 24;
pub const RECORD_HEADER_LEN: usize = 16;
const SNAPLEN: u32 = 65_535;

/// Streaming reader yielding frames in capture order.
pub struct PcapReader<R> {
    inner: R,
    swapped: bool,
    next_index: u64,
    done: bool,
}

impl<R: Read> PcapReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut header = [0u8; GLOBAL_HEADER_LEN];
        read_full(&mut inner, &mut header).map_err(|e| match e {
            Error::TruncatedCapture(_) => {
                Error::UnsupportedFormat("file shorter than the global header".into())
            }
            other => other,
        })?;
        let magic = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let swapped = match magic {
            MAGIC => false,
            MAGIC_SWAPPED => true,
            other => return Err(Error::UnsupportedFormat(format!("bad magic 0x{other:08x}"))),
        };
        let word = |b: &[u8]| {
            let v = u32::from_le_bytes(b.try_into().unwrap());
            if swapped {
                v.swap_bytes()
            } else {
                v
            }
        };
        let linktype = word(&header[20..24]);
        if linktype != LINKTYPE_ETHERNET {
            return Err(Error::UnsupportedLinkType(linktype));
        }
        Ok(PcapReader {
            inner,
            swapped,
            next_index: 0,
            done: false,
        })
    }

    fn word(&self, b: &[u8]) -> u32 {
        let v = u32::from_le_bytes(b.try_into().unwrap());
        if self.swapped {
            v.swap_bytes()
        } else {
            v
        }
    }

    fn read_record(&mut self) -> Result<Option<RawFrame>> {
        let mut rec = [0u8; RECORD_HEADER_LEN];
        let got = read_some(&mut self.inner, &mut rec)?;
        if got == 0 {
            return Ok(None);
        }
        let index = self.next_index;
        if got < RECORD_HEADER_LEN {
            return Err(Error::TruncatedCapture(format!(
                "record header of frame {index} cut short"
            )));
        }
        let ts_sec = self.word(&rec[0..4]) as u64;
        let ts_usec = self.word(&rec[4..8]) as u64;
        let incl_len = self.word(&rec[8..12]) as usize;
        let orig_len = self.word(&rec[12..16]);
        let mut data = vec![0u8; incl_len];
        read_full(&mut self.inner, &mut data).map_err(|_| {
            Error::TruncatedCapture(format!("record data of frame {index} cut short"))
        })?;
        if data.len() < ETHERNET_HEADER_LEN {
            return Err(Error::MalformedFrame {
                index,
                reason: format!("{} bytes is shorter than an Ethernet header", data.len()),
            });
        }
        self.next_index += 1;
        Ok(Some(RawFrame {
            index,
            timestamp_us: ts_sec * 1_000_000 + ts_usec,
            data,
            orig_len,
        }))
    }
}

impl<R: Read> Iterator for PcapReader<R> {
    type Item = Result<RawFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_record() {
            Ok(Some(f)) => Some(Ok(f)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn read_some<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    if read_some(r, buf)? < buf.len() {
        return Err(Error::TruncatedCapture("unexpected end of file".into()));
    }
    Ok(())
}

pub fn read_pcap(path: impl AsRef<Path>) -> Result<Vec<RawFrame>> {
    let file = File::open(path)?;
    PcapReader::new(BufReader::new(file))?.collect()
}

/// Serializes frames as a little-endian classic pcap with microsecond
/// timestamps and Ethernet link type.
pub fn write_pcap_to<W: Write>(frames: &[RawFrame], mut w: W) -> Result<()> {
    w.write_all(&MAGIC.to_le_bytes())?;
    w.write_all(&2u16.to_le_bytes())?;
    w.write_all(&4u16.to_le_bytes())?;
    w.write_all(&0i32.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    w.write_all(&SNAPLEN.to_le_bytes())?;
    w.write_all(&LINKTYPE_ETHERNET.to_le_bytes())?;
    for f in frames {
        let secs = u32::try_from(f.timestamp_us / 1_000_000).map_err(|_| {
            Error::InvalidParameter(format!(
                "timestamp of frame {} does not fit a pcap record",
                f.index
            ))
        })?;
        let incl = u32::try_from(f.data.len())
            .map_err(|_| Error::InvalidParameter(format!("frame {} too large", f.index)))?;
        w.write_all(&secs.to_le_bytes())?;
        w.write_all(&((f.timestamp_us % 1_000_000) as u32).to_le_bytes())?;
        w.write_all(&incl.to_le_bytes())?;
        w.write_all(&f.orig_len.max(incl).to_le_bytes())?;
        w.write_all(&f.data)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pcap(frames: &[RawFrame], path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_pcap_to(frames, BufWriter::new(file))
}
