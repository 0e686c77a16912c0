//! Trace statistics (frame counts, address diversity, flows, ATU, rate).

use std::collections::HashSet;
use std::net::Ipv4Addr;

use super::packet::{self, flow_key};
use super::{FlowKey, MacAddr, RawFrame, Transport};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStats {
    pub duration_s: f64,
    pub frame_count: u64,
    pub anomaly_count: u64,
    pub distinct_macs: u64,
    pub distinct_ips: u64,
    pub distinct_protocols: u64,
    pub tcp_flows: u64,
    pub udp_flows: u64,
    /// Mean captured frame length (average transport unit), bytes.
    pub atu_mean: f64,
    /// Population standard deviation of captured frame length, bytes.
    pub atu_std: f64,
    pub kpackets_per_sec: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Protocol {
    Ether(u16),
    Ip(u8),
}

/// Protocols are identified by IP protocol number for IPv4 frames and by
/// EtherType otherwise. A zero duration yields a rate of 0.
pub fn compute_stats(frames: &[RawFrame], labels: Option<&[bool]>) -> Result<TraceStats> {
    if frames.is_empty() {
        return Err(Error::EmptyTrace);
    }
    if let Some(l) = labels {
        if l.len() != frames.len() {
            return Err(Error::InvalidParameter(format!(
                "{} labels for {} frames",
                l.len(),
                frames.len()
            )));
        }
    }
    let mut macs: HashSet<MacAddr> = HashSet::new();
    let mut ips: HashSet<Ipv4Addr> = HashSet::new();
    let mut protocols: HashSet<Protocol> = HashSet::new();
    let mut flows: HashSet<FlowKey> = HashSet::new();
    let (mut first, mut last) = (u64::MAX, 0u64);
    for f in frames {
        first = first.min(f.timestamp_us);
        last = last.max(f.timestamp_us);
        let Some(p) = packet::parse(&f.data) else {
            continue;
        };
        macs.insert(p.src_mac);
        macs.insert(p.dst_mac);
        match p.ipv4 {
            Some(ip) => {
                ips.insert(ip.src);
                ips.insert(ip.dst);
                protocols.insert(Protocol::Ip(ip.protocol));
            }
            None => {
                protocols.insert(Protocol::Ether(p.ethertype));
            }
        }
        if let Some((key, _)) = flow_key(f) {
            flows.insert(key);
        }
    }
    let n = frames.len() as f64;
    let atu_mean = frames.iter().map(|f| f.data.len() as f64).sum::<f64>() / n;
    let atu_var = frames
        .iter()
        .map(|f| (f.data.len() as f64 - atu_mean).powi(2))
        .sum::<f64>()
        / n;
    let duration_s = (last - first) as f64 / 1e6;
    let kpackets_per_sec = if duration_s > 0.0 {
        n / duration_s / 1000.0
    } else {
        0.0
    };
    Ok(TraceStats {
        duration_s,
        frame_count: frames.len() as u64,
        anomaly_count: labels.map_or(0, |l| l.iter().filter(|&&b| b).count() as u64),
        distinct_macs: macs.len() as u64,
        distinct_ips: ips.len() as u64,
        distinct_protocols: protocols.len() as u64,
        tcp_flows: flows
            .iter()
            .filter(|k| k.transport == Transport::Tcp)
            .count() as u64,
        udp_flows: flows
            .iter()
            .filter(|k| k.transport == Transport::Udp)
            .count() as u64,
        atu_mean,
        atu_std: atu_var.sqrt(),
        kpackets_per_sec,
    })
}
