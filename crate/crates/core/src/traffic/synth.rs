//! Deterministic industrial-style traffic: an HMI polling four PLCs over a
//! Modbus/TCP-like exchange plus UDP heartbeats, repeating every 64 frames.

use std::net::Ipv4Addr;

use super::packet::{build_frame, FrameSpec};
use super::{FlowKey, MacAddr, RawFrame, Transport};

pub const FRAMES_PER_CYCLE: usize = 64;
pub const PLC_COUNT: usize = 4;
pub const MODBUS_PORT: u16 = 502;
pub const HEARTBEAT_PORT: u16 = 20_000;
/// Makes one cycle exactly 5 KiB, so byte-mode fragments repeat every five.
pub const DEFAULT_HEARTBEAT_LEN: usize = 75;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub cycles: usize,
    pub start_us: u64,
    /// Spacing between consecutive frames.
    pub frame_gap_us: u64,
    /// UDP payload bytes of every heartbeat frame (at least 4).
    pub heartbeat_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            cycles: 100,
            start_us: 1_600_000_000_000_000,
            frame_gap_us: 1_000,
            heartbeat_len: DEFAULT_HEARTBEAT_LEN,
        }
    }
}

pub fn hmi_mac() -> MacAddr {
    MacAddr([0x00, 0x1b, 0x1b, 0x00, 0x00, 0x0a])
}

pub fn hmi_ip() -> Ipv4Addr {
    Ipv4Addr::new(192, 168, 1, 10)
}

pub fn plc_mac(i: usize) -> MacAddr {
    MacAddr([0x00, 0x0e, 0x8c, 0x00, 0x00, 0x21 + i as u8])
}

pub fn plc_ip(i: usize) -> Ipv4Addr {
    Ipv4Addr::new(192, 168, 1, 21 + i as u8)
}

/// TCP flow from the HMI to PLC `i`.
pub fn poll_flow(i: usize) -> FlowKey {
    FlowKey {
        transport: Transport::Tcp,
        src_ip: hmi_ip(),
        src_port: 49_152 + i as u16,
        dst_ip: plc_ip(i),
        dst_port: MODBUS_PORT,
    }
}

fn register_values(plc: usize, poll: usize) -> Vec<u8> {
    (0..(4 + 2 * plc))
        .flat_map(|r| {
            let v = (1000 + 250 * plc + 37 * r + 11 * poll) as u16;
            v.to_be_bytes()
        })
        .collect()
}

/// The 64 frames of one cycle as (src MAC, dst MAC, flow, tcp, payload).
fn cycle_frames(heartbeat_len: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::with_capacity(FRAMES_PER_CYCLE);
    for poll in 0..4 {
        for plc in 0..PLC_COUNT {
            let fwd = poll_flow(plc);
            let tid = (poll * PLC_COUNT + plc) as u16;
            let count = (4 + 2 * plc) as u16;
            let seq_req = 1_000 + 12 * poll as u32;
            let seq_resp = 9_000 + 32 * poll as u32;

            let mut req = Vec::with_capacity(12);
            req.extend_from_slice(&tid.to_be_bytes());
            req.extend_from_slice(&[0, 0, 0, 6, 1 + plc as u8, 0x03]);
            req.extend_from_slice(&(100 * plc as u16).to_be_bytes());
            req.extend_from_slice(&count.to_be_bytes());

            let regs = register_values(plc, poll);
            let mut resp = Vec::with_capacity(9 + regs.len());
            resp.extend_from_slice(&tid.to_be_bytes());
            resp.extend_from_slice(&[0, 0]);
            resp.extend_from_slice(&((3 + regs.len()) as u16).to_be_bytes());
            resp.extend_from_slice(&[1 + plc as u8, 0x03, regs.len() as u8]);
            resp.extend_from_slice(&regs);

            let ip_id = 4 * tid;
            out.push(build_frame(&FrameSpec {
                src_mac: hmi_mac(),
                dst_mac: plc_mac(plc),
                flow: fwd,
                ip_id,
                ttl: 64,
                tcp: (seq_req, seq_resp, 0x18),
                payload: &req,
            }));
            out.push(build_frame(&FrameSpec {
                src_mac: plc_mac(plc),
                dst_mac: hmi_mac(),
                flow: fwd.reversed(),
                ip_id: ip_id + 1,
                ttl: 30,
                tcp: (seq_resp, seq_req + 12, 0x18),
                payload: &resp,
            }));
            out.push(build_frame(&FrameSpec {
                src_mac: hmi_mac(),
                dst_mac: plc_mac(plc),
                flow: fwd,
                ip_id: ip_id + 2,
                ttl: 64,
                tcp: (seq_req + 12, seq_resp + resp.len() as u32, 0x10),
                payload: &[],
            }));
        }
        for plc in 0..PLC_COUNT {
            let mut status = Vec::with_capacity(heartbeat_len.max(4));
            status.extend_from_slice(b"HB");
            status.push(plc as u8);
            status.push(poll as u8);
            status.extend((4..heartbeat_len).map(|k| ((k * 7 + plc * 13 + poll * 3) % 256) as u8));
            out.push(build_frame(&FrameSpec {
                src_mac: plc_mac(plc),
                dst_mac: MacAddr::BROADCAST,
                flow: FlowKey {
                    transport: Transport::Udp,
                    src_ip: plc_ip(plc),
                    src_port: HEARTBEAT_PORT,
                    dst_ip: Ipv4Addr::new(192, 168, 1, 255),
                    dst_port: HEARTBEAT_PORT,
                },
                ip_id: (1000 + 4 * poll + plc) as u16,
                ttl: 30,
                tcp: (0, 0, 0),
                payload: &status,
            }));
        }
    }
    debug_assert_eq!(out.len(), FRAMES_PER_CYCLE);
    out
}

/// Bytes carried by one cycle.
pub fn cycle_bytes(config: &SynthConfig) -> usize {
    cycle_frames(config.heartbeat_len)
        .iter()
        .map(Vec::len)
        .sum()
}

pub fn periodic_trace(config: &SynthConfig) -> Vec<RawFrame> {
    let cycle = cycle_frames(config.heartbeat_len);
    let total = config.cycles * FRAMES_PER_CYCLE;
    (0..total)
        .map(|i| {
            RawFrame::new(
                i as u64,
                config.start_us + i as u64 * config.frame_gap_us,
                cycle[i % FRAMES_PER_CYCLE].clone(),
            )
        })
        .collect()
}

/// Number of cycles whose byte stream fills at least `fragments` byte-mode
/// fragments.
pub fn cycles_for_fragments(config: &SynthConfig, fragments: usize) -> usize {
    (fragments * 1024).div_ceil(cycle_bytes(config))
}
