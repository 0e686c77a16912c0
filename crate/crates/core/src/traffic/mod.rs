//! Capture ingest: classic pcap I/O, trace statistics, ground-truth label
//! rules and synthetic anomaly injection.

pub mod inject;
pub mod labels;
pub mod packet;
pub mod pcap;
pub mod stats;
pub mod synth;

use std::fmt;
use std::net::Ipv4Addr;

pub use inject::{inject_anomalies, AttackKind, InjectionSpec, InjectionTarget};
pub use labels::{label_frames, read_labels, write_labels, AddressScope, LabelRule};
pub use pcap::{read_pcap, write_pcap, PcapReader};
pub use stats::{compute_stats, TraceStats};

/// Minimum length of an Ethernet II header.
pub const ETHERNET_HEADER_LEN: usize = 14;

/// One captured link-layer frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    /// 0-based ordinal in the capture.
    pub index: u64,
    /// Microseconds since the Unix epoch.
    pub timestamp_us: u64,
    /// Captured bytes from the Ethernet header onward.
    pub data: Vec<u8>,
    /// Length of the frame on the wire (may exceed `data.len()` when the
    /// capture was truncated by a snap length).
    pub orig_len: u32,
}

impl RawFrame {
    pub fn new(index: u64, timestamp_us: u64, data: Vec<u8>) -> Self {
        let orig_len = data.len() as u32;
        RawFrame {
            index,
            timestamp_us,
            data,
            orig_len,
        }
    }

    pub fn captured_len(&self) -> usize {
        self.data.len()
    }
}

/// Renumbers frames `0..len` in their current order.
pub fn reindex(frames: &mut [RawFrame]) {
    for (i, f) in frames.iter_mut().enumerate() {
        f.index = i as u64;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Transport {
    Tcp,
    Udp,
}

impl Transport {
    pub fn protocol_number(self) -> u8 {
        match self {
            Transport::Tcp => 6,
            Transport::Udp => 17,
        }
    }
}

/// Directional transport 5-tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub transport: Transport,
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
}

impl FlowKey {
    pub fn reversed(&self) -> FlowKey {
        FlowKey {
            transport: self.transport,
            src_ip: self.dst_ip,
            src_port: self.dst_port,
            dst_ip: self.src_ip,
            dst_port: self.src_port,
        }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let proto = match self.transport {
            Transport::Tcp => "tcp",
            Transport::Udp => "udp",
        };
        write!(
            f,
            "{proto}:{}:{}->{}:{}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port
        )
    }
}

/// 48-bit hardware address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            b[0], b[1], b[2], b[3], b[4], b[5]
        )
    }
}

/// Parses the `Display` form `tcp:10.0.0.1:49152->10.0.0.2:502`.
impl std::str::FromStr for FlowKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("`{s}` is not a flow (expected proto:ip:port->ip:port)");
        let (proto, rest) = s.split_once(':').ok_or_else(bad)?;
        let transport = match proto {
            "tcp" => Transport::Tcp,
            "udp" => Transport::Udp,
            _ => return Err(bad()),
        };
        let (src, dst) = rest.split_once("->").ok_or_else(bad)?;
        let endpoint = |e: &str| -> Option<(Ipv4Addr, u16)> {
            let (ip, port) = e.rsplit_once(':')?;
            Some((ip.parse().ok()?, port.parse().ok()?))
        };
        let (src_ip, src_port) = endpoint(src).ok_or_else(bad)?;
        let (dst_ip, dst_port) = endpoint(dst).ok_or_else(bad)?;
        Ok(FlowKey {
            transport,
            src_ip,
            src_port,
            dst_ip,
            dst_port,
        })
    }
}

impl std::str::FromStr for MacAddr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split([':', '-']).collect();
        if parts.len() != 6 {
            return Err(format!("`{s}` is not a MAC address"));
        }
        let mut out = [0u8; 6];
        for (o, p) in out.iter_mut().zip(parts) {
            if p.len() != 2 {
                return Err(format!("`{s}` is not a MAC address"));
            }
            *o = u8::from_str_radix(p, 16).map_err(|_| format!("`{s}` is not a MAC address"))?;
        }
        Ok(MacAddr(out))
    }
}
