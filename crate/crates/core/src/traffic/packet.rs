//! Ethernet / IPv4 / TCP / UDP header parsing and frame synthesis.

use std::net::Ipv4Addr;

use super::{FlowKey, MacAddr, RawFrame, Transport, ETHERNET_HEADER_LEN};

pub const ETHERTYPE_IPV4: u16 = 0x0800;
pub const ETHERTYPE_ARP: u16 = 0x0806;
pub const ETHERTYPE_VLAN: u16 = 0x8100;

/// Minimum Ethernet frame length without FCS.
pub const MIN_FRAME_LEN: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Header {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub protocol: u8,
    /// Offset of the IP header within the frame.
    pub offset: usize,
    pub header_len: usize,
    pub total_len: usize,
    pub fragment_offset: u16,
}

impl Ipv4Header {
    /// Byte range of the IP payload inside the frame, clipped to captured data.
    pub fn payload_range(&self, frame_len: usize) -> (usize, usize) {
        let start = (self.offset + self.header_len).min(frame_len);
        let end = (self.offset + self.total_len).min(frame_len).max(start);
        (start, end)
    }
}

/// Link and network layer view of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParsedFrame {
    pub dst_mac: MacAddr,
    pub src_mac: MacAddr,
    pub ethertype: u16,
    pub ipv4: Option<Ipv4Header>,
}

fn mac_at(d: &[u8], off: usize) -> MacAddr {
    let mut m = [0u8; 6];
    m.copy_from_slice(&d[off..off + 6]);
    MacAddr(m)
}

/// Parses the Ethernet header (with one optional 802.1Q tag) and, when
/// present, the IPv4 header. Returns `None` for frames shorter than an
/// Ethernet header.
pub fn parse(data: &[u8]) -> Option<ParsedFrame> {
    if data.len() < ETHERNET_HEADER_LEN {
        return None;
    }
    let dst_mac = mac_at(data, 0);
    let src_mac = mac_at(data, 6);
    let mut ethertype = u16::from_be_bytes([data[12], data[13]]);
    let mut l3 = ETHERNET_HEADER_LEN;
    if ethertype == ETHERTYPE_VLAN && data.len() >= l3 + 4 {
        ethertype = u16::from_be_bytes([data[16], data[17]]);
        l3 += 4;
    }
    let ipv4 = if ethertype == ETHERTYPE_IPV4 {
        parse_ipv4(data, l3)
    } else {
        None
    };
    Some(ParsedFrame {
        dst_mac,
        src_mac,
        ethertype,
        ipv4,
    })
}

fn parse_ipv4(data: &[u8], off: usize) -> Option<Ipv4Header> {
    let ip = data.get(off..)?;
    if ip.len() < 20 || ip[0] >> 4 != 4 {
        return None;
    }
    let header_len = ((ip[0] & 0x0f) as usize) * 4;
    if header_len < 20 || ip.len() < header_len {
        return None;
    }
    let total_len = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    Some(Ipv4Header {
        src: Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]),
        dst: Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]),
        protocol: ip[9],
        offset: off,
        header_len,
        total_len: total_len.max(header_len),
        fragment_offset: u16::from_be_bytes([ip[6], ip[7]]) & 0x1fff,
    })
}

/// Directional 5-tuple of a TCP or UDP over IPv4 frame. Non-initial IP
/// fragments carry no ports and yield `None`.
pub fn flow_key(frame: &RawFrame) -> Option<(FlowKey, Ipv4Header)> {
    let parsed = parse(&frame.data)?;
    let ip = parsed.ipv4?;
    let transport = match ip.protocol {
        6 => Transport::Tcp,
        17 => Transport::Udp,
        _ => return None,
    };
    if ip.fragment_offset != 0 {
        return None;
    }
    let (start, end) = ip.payload_range(frame.data.len());
    if end - start < 4 {
        return None;
    }
    let d = &frame.data[start..];
    Some((
        FlowKey {
            transport,
            src_ip: ip.src,
            src_port: u16::from_be_bytes([d[0], d[1]]),
            dst_ip: ip.dst,
            dst_port: u16::from_be_bytes([d[2], d[3]]),
        },
        ip,
    ))
}

/// Everything needed to synthesize an Ethernet/IPv4/{TCP,UDP} frame.
#[derive(Debug, Clone)]
pub struct FrameSpec<'a> {
    pub src_mac: MacAddr,
    pub dst_mac: MacAddr,
    pub flow: FlowKey,
    pub ip_id: u16,
    pub ttl: u8,
    /// TCP only: sequence number, acknowledgement number, flags.
    pub tcp: (u32, u32, u8),
    pub payload: &'a [u8],
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|c| u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)]) as u32)
        .sum();
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

pub fn build_frame(spec: &FrameSpec<'_>) -> Vec<u8> {
    let transport_len = match spec.flow.transport {
        Transport::Tcp => 20,
        Transport::Udp => 8,
    };
    let total_len = 20 + transport_len + spec.payload.len();
    let mut f = Vec::with_capacity((ETHERNET_HEADER_LEN + total_len).max(MIN_FRAME_LEN));
    f.extend_from_slice(&spec.dst_mac.0);
    f.extend_from_slice(&spec.src_mac.0);
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

    let ip_start = f.len();
    f.push(0x45);
    f.push(0);
    f.extend_from_slice(&(total_len as u16).to_be_bytes());
    f.extend_from_slice(&spec.ip_id.to_be_bytes());
    f.extend_from_slice(&0x4000u16.to_be_bytes()); // don't fragment
    f.push(spec.ttl);
    f.push(spec.flow.transport.protocol_number());
    f.extend_from_slice(&[0, 0]);
    f.extend_from_slice(&spec.flow.src_ip.octets());
    f.extend_from_slice(&spec.flow.dst_ip.octets());
    let csum = ipv4_checksum(&f[ip_start..ip_start + 20]);
    f[ip_start + 10..ip_start + 12].copy_from_slice(&csum.to_be_bytes());

    f.extend_from_slice(&spec.flow.src_port.to_be_bytes());
    f.extend_from_slice(&spec.flow.dst_port.to_be_bytes());
    match spec.flow.transport {
        Transport::Udp => {
            f.extend_from_slice(&((8 + spec.payload.len()) as u16).to_be_bytes());
            f.extend_from_slice(&[0, 0]);
        }
        Transport::Tcp => {
            let (seq, ack, flags) = spec.tcp;
            f.extend_from_slice(&seq.to_be_bytes());
            f.extend_from_slice(&ack.to_be_bytes());
            f.push(5 << 4);
            f.push(flags);
            f.extend_from_slice(&8192u16.to_be_bytes());
            f.extend_from_slice(&[0, 0, 0, 0]);
        }
    }
    f.extend_from_slice(spec.payload);
    if f.len() < MIN_FRAME_LEN {
        f.resize(MIN_FRAME_LEN, 0);
    }
    f
}

/// Minimal ARP request frame (who-has `target` tell `sender`).
pub fn build_arp_request(src_mac: MacAddr, sender: Ipv4Addr, target: Ipv4Addr) -> Vec<u8> {
    let mut f = Vec::with_capacity(MIN_FRAME_LEN);
    f.extend_from_slice(&MacAddr::BROADCAST.0);
    f.extend_from_slice(&src_mac.0);
    f.extend_from_slice(&ETHERTYPE_ARP.to_be_bytes());
    f.extend_from_slice(&[0, 1, 8, 0, 6, 4, 0, 1]);
    f.extend_from_slice(&src_mac.0);
    f.extend_from_slice(&sender.octets());
    f.extend_from_slice(&[0; 6]);
    f.extend_from_slice(&target.octets());
    f.resize(MIN_FRAME_LEN, 0);
    f
}
