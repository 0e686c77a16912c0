//! Ground-truth label rules and the per-frame label file.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use super::packet;
use super::{MacAddr, RawFrame};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Address {
    Mac(MacAddr),
    Ip(Ipv4Addr),
}

impl FromStr for Address {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Ok(ip) = s.parse::<Ipv4Addr>() {
            return Ok(Address::Ip(ip));
        }
        s.parse::<MacAddr>()
            .map(Address::Mac)
            .map_err(|_| Error::InvalidRule(format!("`{s}` is neither a MAC nor an IPv4 address")))
    }
}

/// Which header fields an address rule compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddressScope {
    Source,
    SourceOrDestination,
}

impl AddressScope {
    /// MAC addresses match the source only; IP addresses match either end.
    pub fn default_for(address: &Address) -> Self {
        match address {
            Address::Mac(_) => AddressScope::Source,
            Address::Ip(_) => AddressScope::SourceOrDestination,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelRule {
    FrameList(BTreeSet<u64>),
    AddressMatch {
        address: Address,
        scope: AddressScope,
    },
    /// Inclusive microsecond window.
    TimeWindow {
        start_us: u64,
        end_us: u64,
    },
}

impl LabelRule {
    /// Address rule with the default scope for the address family.
    pub fn address(value: &str) -> Result<Self> {
        let address: Address = value.parse()?;
        Ok(LabelRule::AddressMatch {
            scope: AddressScope::default_for(&address),
            address,
        })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LabelRule::TimeWindow { start_us, end_us } if start_us > end_us => {
                Err(Error::InvalidRule(format!(
                    "time window starts at {start_us} after its end {end_us}"
                )))
            }
            _ => Ok(()),
        }
    }

    fn matches(&self, frame: &RawFrame) -> bool {
        match self {
            LabelRule::FrameList(set) => set.contains(&frame.index),
            LabelRule::TimeWindow { start_us, end_us } => {
                (*start_us..=*end_us).contains(&frame.timestamp_us)
            }
            LabelRule::AddressMatch { address, scope } => {
                let Some(p) = packet::parse(&frame.data) else {
                    return false;
                };
                let both = *scope == AddressScope::SourceOrDestination;
                match address {
                    Address::Mac(m) => p.src_mac == *m || (both && p.dst_mac == *m),
                    Address::Ip(ip) => p
                        .ipv4
                        .is_some_and(|h| h.src == *ip || (both && h.dst == *ip)),
                }
            }
        }
    }
}

pub fn label_frames(frames: &[RawFrame], rule: &LabelRule) -> Result<Vec<bool>> {
    rule.validate()?;
    Ok(frames.iter().map(|f| rule.matches(f)).collect())
}

/// Writes one `index<TAB>0|1` line per frame.
pub fn write_labels(labels: &[bool], path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::with_capacity(labels.len() * 8);
    for (i, &l) in labels.iter().enumerate() {
        writeln!(out, "{i}\t{}", u8::from(l))?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a label file; indices must run `0, 1, 2, ...` without gaps.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path)?;
    parse_labels(&text)
}

pub fn parse_labels(text: &str) -> Result<Vec<bool>> {
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || Error::InvalidParameter(format!("label line {}: `{line}`", lineno + 1));
        let (idx, val) = line.split_once(char::is_whitespace).ok_or_else(bad)?;
        let idx: u64 = idx.parse().map_err(|_| bad())?;
        let val = match val.trim() {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        if idx != labels.len() as u64 {
            return Err(Error::LabelGap(labels.len() as u64));
        }
        labels.push(val);
    }
    Ok(labels)
}
