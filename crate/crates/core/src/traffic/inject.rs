//! Synthetic attacks with exact ground truth: flooding, eavesdropping
//! (duplicated frames redirected to an attacker) and frame loss.

use std::collections::HashSet;
use std::net::Ipv4Addr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::labels::Address;
use super::packet::{self, build_frame, flow_key, FrameSpec};
use super::{reindex, FlowKey, MacAddr, RawFrame, Transport};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Dos,
    Eavesdrop,
    Drop,
}

impl AttackKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dos" => Some(AttackKind::Dos),
            "eavesdrop" => Some(AttackKind::Eavesdrop),
            "drop" => Some(AttackKind::Drop),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectionTarget {
    Flow(FlowKey),
    Host(Address),
}

impl InjectionTarget {
    fn matches(&self, frame: &RawFrame) -> bool {
        match self {
            InjectionTarget::Flow(k) => flow_key(frame).is_some_and(|(key, _)| key == *k),
            InjectionTarget::Host(addr) => {
                let Some(p) = packet::parse(&frame.data) else {
                    return false;
                };
                match addr {
                    Address::Mac(m) => p.src_mac == *m || p.dst_mac == *m,
                    Address::Ip(ip) => p.ipv4.is_some_and(|h| h.src == *ip || h.dst == *ip),
                }
            }
        }
    }
}

/// `intensity` is frames per second for `Dos` and a fraction in `[0, 1]` of
/// the matching in-window frames for `Eavesdrop` and `Drop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectionSpec {
    pub kind: AttackKind,
    pub target: InjectionTarget,
    pub intensity: f64,
    pub start_us: u64,
    pub end_us: u64,
    pub seed: u64,
}

impl InjectionSpec {
    fn validate(&self, frames: &[RawFrame]) -> Result<()> {
        let ok = match self.kind {
            AttackKind::Dos => self.intensity > 0.0 && self.intensity.is_finite(),
            AttackKind::Eavesdrop => self.intensity > 0.0 && self.intensity <= 1.0,
            AttackKind::Drop => (0.0..=1.0).contains(&self.intensity),
        };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "intensity {} out of range for {:?}",
                self.intensity, self.kind
            )));
        }
        let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
            return Err(Error::EmptyTrace);
        };
        if self.start_us > self.end_us
            || self.start_us < first.timestamp_us
            || self.end_us > last.timestamp_us
        {
            return Err(Error::InvalidWindow(format!(
                "[{}, {}] is not inside the trace span [{}, {}]",
                self.start_us, self.end_us, first.timestamp_us, last.timestamp_us
            )));
        }
        if frames
            .windows(2)
            .any(|w| w[1].timestamp_us < w[0].timestamp_us)
        {
            return Err(Error::InvalidParameter(
                "trace is not sorted by timestamp".into(),
            ));
        }
        Ok(())
    }

    fn in_window(&self, f: &RawFrame) -> bool {
        (self.start_us..=self.end_us).contains(&f.timestamp_us)
    }
}

/// Returns the modified, re-indexed, timestamp-sorted trace and one label per
/// output frame.
pub fn inject_anomalies(
    frames: &[RawFrame],
    spec: &InjectionSpec,
) -> Result<(Vec<RawFrame>, Vec<bool>)> {
    spec.validate(frames)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out: Vec<(RawFrame, bool)> = match spec.kind {
        AttackKind::Dos => dos(frames, spec, &mut rng)?,
        AttackKind::Eavesdrop => eavesdrop(frames, spec, &mut rng),
        AttackKind::Drop => drop_frames(frames, spec, &mut rng),
    };
    out.sort_by_key(|(f, _)| f.timestamp_us);
    let (mut frames, labels): (Vec<RawFrame>, Vec<bool>) = out.into_iter().unzip();
    reindex(&mut frames);
    Ok((frames, labels))
}

struct Addresses {
    macs: HashSet<MacAddr>,
    ips: HashSet<Ipv4Addr>,
}

fn trace_addresses(frames: &[RawFrame]) -> Addresses {
    let mut macs = HashSet::new();
    let mut ips = HashSet::new();
    for p in frames.iter().filter_map(|f| packet::parse(&f.data)) {
        macs.insert(p.src_mac);
        macs.insert(p.dst_mac);
        if let Some(h) = p.ipv4 {
            ips.insert(h.src);
            ips.insert(h.dst);
        }
    }
    Addresses { macs, ips }
}

/// A locally administered unicast MAC and a private IPv4 address, both
/// absent from the trace.
fn attacker_identity(frames: &[RawFrame], rng: &mut ChaCha8Rng) -> (MacAddr, Ipv4Addr) {
    let seen = trace_addresses(frames);
    let mac = loop {
        let mut b: [u8; 6] = rng.gen();
        b[0] = (b[0] & 0xfc) | 0x02;
        let m = MacAddr(b);
        if !seen.macs.contains(&m) {
            break m;
        }
    };
    let ip = loop {
        let ip = Ipv4Addr::new(10, rng.gen(), rng.gen(), rng.gen_range(1..255));
        if !seen.ips.contains(&ip) {
            break ip;
        }
    };
    (mac, ip)
}

fn dos(
    frames: &[RawFrame],
    spec: &InjectionSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(RawFrame, bool)>> {
    let (target_ip, target_port) = match spec.target {
        InjectionTarget::Flow(k) => (k.dst_ip, k.dst_port),
        InjectionTarget::Host(Address::Ip(ip)) => (ip, 502),
        InjectionTarget::Host(Address::Mac(m)) => {
            let ip = frames
                .iter()
                .filter_map(|f| packet::parse(&f.data))
                .find_map(|p| p.ipv4.filter(|_| p.src_mac == m).map(|h| h.src))
                .ok_or_else(|| {
                    Error::InvalidParameter(format!("no IPv4 address seen for host {m}"))
                })?;
            (ip, 502)
        }
    };
    let target_mac = frames
        .iter()
        .filter_map(|f| packet::parse(&f.data))
        .find_map(|p| {
            let h = p.ipv4?;
            if h.dst == target_ip {
                Some(p.dst_mac)
            } else if h.src == target_ip {
                Some(p.src_mac)
            } else {
                None
            }
        })
        .unwrap_or(MacAddr::BROADCAST);
    let (attacker_mac, attacker_ip) = attacker_identity(frames, rng);
    let span = spec.end_us - spec.start_us;
    let count = (spec.intensity * span as f64 / 1e6).floor() as u64;
    let src_port: u16 = rng.gen_range(1024..65535);

    let mut out: Vec<(RawFrame, bool)> = frames.iter().cloned().map(|f| (f, false)).collect();
    for i in 0..count {
        let len = rng.gen_range(18..=64);
        let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let data = build_frame(&FrameSpec {
            src_mac: attacker_mac,
            dst_mac: target_mac,
            flow: FlowKey {
                transport: Transport::Udp,
                src_ip: attacker_ip,
                src_port,
                dst_ip: target_ip,
                dst_port: target_port,
            },
            ip_id: i as u16,
            ttl: 64,
            tcp: (0, 0, 0),
            payload: &payload,
        });
        let ts = spec.start_us + (span as u128 * i as u128 / count as u128) as u64;
        out.push((RawFrame::new(0, ts, data), true));
    }
    Ok(out)
}

fn chosen(candidates: &[usize], fraction: f64, rng: &mut ChaCha8Rng) -> HashSet<usize> {
    let k = (fraction * candidates.len() as f64).round() as usize;
    sample(rng, candidates.len(), k.min(candidates.len()))
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}

fn candidates(frames: &[RawFrame], spec: &InjectionSpec) -> Vec<usize> {
    (0..frames.len())
        .filter(|&i| spec.in_window(&frames[i]) && spec.target.matches(&frames[i]))
        .collect()
}

fn eavesdrop(
    frames: &[RawFrame],
    spec: &InjectionSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<(RawFrame, bool)> {
    let (attacker_mac, _) = attacker_identity(frames, rng);
    let picked = chosen(&candidates(frames, spec), spec.intensity, rng);
    let mut out = Vec::with_capacity(frames.len() + picked.len());
    for (i, f) in frames.iter().enumerate() {
        out.push((f.clone(), false));
        if picked.contains(&i) {
            let mut dup = f.clone();
            dup.data[0..6].copy_from_slice(&attacker_mac.0);
            out.push((dup, true));
        }
    }
    out
}

fn drop_frames(
    frames: &[RawFrame],
    spec: &InjectionSpec,
    rng: &mut ChaCha8Rng,
) -> Vec<(RawFrame, bool)> {
    let removed = chosen(&candidates(frames, spec), spec.intensity, rng);
    let mut out: Vec<(RawFrame, bool)> = Vec::with_capacity(frames.len());
    let mut gap_pending = false;
    for (i, f) in frames.iter().enumerate() {
        if removed.contains(&i) {
            if let Some(prev) = out.last_mut() {
                prev.1 = true;
            }
            gap_pending = true;
            continue;
        }
        out.push((f.clone(), gap_pending));
        gap_pending = false;
    }
    out
}
