use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use pcapae_core::traffic::labels::Address;
use pcapae_core::traffic::packet::{build_frame, parse, FrameSpec};
use pcapae_core::traffic::pcap::write_pcap_to;
use pcapae_core::traffic::synth::{
    hmi_mac, periodic_trace, plc_ip, plc_mac, poll_flow, SynthConfig,
};
use pcapae_core::traffic::{
    compute_stats, inject_anomalies, label_frames, read_labels, read_pcap, write_labels,
    write_pcap, AttackKind, FlowKey, InjectionSpec, InjectionTarget, LabelRule, MacAddr,
    PcapReader, RawFrame, Transport,
};
use pcapae_core::Error;
use proptest::prelude::*;

fn tcp(src: (u8, u16), dst: (u8, u16), len: usize) -> Vec<u8> {
    let payload = vec![0xab; len.saturating_sub(54)];
    build_frame(&FrameSpec {
        src_mac: MacAddr([2, 0, 0, 0, 0, src.0]),
        dst_mac: MacAddr([2, 0, 0, 0, 0, dst.0]),
        flow: FlowKey {
            transport: Transport::Tcp,
            src_ip: Ipv4Addr::new(10, 0, 0, src.0),
            src_port: src.1,
            dst_ip: Ipv4Addr::new(10, 0, 0, dst.0),
            dst_port: dst.1,
        },
        ip_id: 1,
        ttl: 64,
        tcp: (1, 1, 0x10),
        payload: &payload,
    })
}

fn trace() -> Vec<RawFrame> {
    periodic_trace(&SynthConfig {
        cycles: 20,
        ..SynthConfig::default()
    })
}

/// Classic pcap bytes with every header field written big-endian.
fn big_endian_capture(frames: &[RawFrame]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&0xa1b2c3d4u32.to_be_bytes());
    out.extend_from_slice(&2u16.to_be_bytes());
    out.extend_from_slice(&4u16.to_be_bytes());
    out.extend_from_slice(&0i32.to_be_bytes());
    out.extend_from_slice(&0u32.to_be_bytes());
    out.extend_from_slice(&65535u32.to_be_bytes());
    out.extend_from_slice(&1u32.to_be_bytes());
    for f in frames {
        out.extend_from_slice(&((f.timestamp_us / 1_000_000) as u32).to_be_bytes());
        out.extend_from_slice(&((f.timestamp_us % 1_000_000) as u32).to_be_bytes());
        out.extend_from_slice(&(f.data.len() as u32).to_be_bytes());
        out.extend_from_slice(&f.orig_len.to_be_bytes());
        out.extend_from_slice(&f.data);
    }
    out
}

#[test]
fn swapped_magic_reads_the_same_frames() {
    let frames = vec![RawFrame::new(
        0,
        1_600_000_000_123_456,
        tcp((1, 5000), (2, 80), 60),
    )];
    let mut little = Vec::new();
    write_pcap_to(&frames, &mut little).unwrap();
    let big = big_endian_capture(&frames);
    assert_eq!(&big[..4], &[0xa1, 0xb2, 0xc3, 0xd4]);
    assert_eq!(&little[..4], &[0xd4, 0xc3, 0xb2, 0xa1]);
    let a: Vec<RawFrame> = PcapReader::new(&little[..])
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
    let b: Vec<RawFrame> = PcapReader::new(&big[..])
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(a, b);
    assert_eq!(a, frames);
}

#[test]
fn five_frames_round_trip_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("five.pcap");
    let frames: Vec<RawFrame> = trace().into_iter().take(5).collect();
    write_pcap(&frames, &path).unwrap();
    assert_eq!(read_pcap(&path).unwrap(), frames);
    write_pcap(&[], &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 24);
    assert!(read_pcap(&path).unwrap().is_empty());
}

#[test]
fn stats_examples() {
    let two = vec![
        RawFrame::new(0, 0, tcp((1, 5000), (2, 80), 100)),
        RawFrame::new(1, 10, tcp((2, 80), (1, 5000), 200)),
    ];
    let s = compute_stats(&two, None).unwrap();
    assert_eq!((s.atu_mean, s.atu_std), (150.0, 50.0));
    assert_eq!((s.tcp_flows, s.udp_flows), (2, 0));
    assert_eq!(
        (s.distinct_macs, s.distinct_ips, s.distinct_protocols),
        (2, 2, 1)
    );

    let many: Vec<RawFrame> = (0..1000u64)
        .map(|i| RawFrame::new(i, i * 2_000_000 / 999, tcp((1, 5000), (2, 80), 60)))
        .collect();
    let s = compute_stats(&many, Some(&vec![true; 1000])).unwrap();
    assert_eq!(s.duration_s, 2.0);
    assert!((s.kpackets_per_sec - 0.5).abs() < 1e-12);
    assert_eq!(s.anomaly_count, 1000);

    assert!(matches!(compute_stats(&[], None), Err(Error::EmptyTrace)));
}

#[test]
fn label_rule_examples() {
    let frames = trace();
    let all = label_frames(
        &frames,
        &LabelRule::TimeWindow {
            start_us: frames[0].timestamp_us,
            end_us: frames.last().unwrap().timestamp_us,
        },
    )
    .unwrap();
    assert!(all.iter().all(|&l| l));
    let none = label_frames(&frames, &LabelRule::FrameList(BTreeSet::new())).unwrap();
    assert!(none.iter().all(|&l| !l));

    let attacker = MacAddr([2, 0, 0, 0, 0, 0x77]);
    let mut ten: Vec<RawFrame> = trace().into_iter().take(10).collect();
    for i in [1, 4, 8] {
        ten[i].data[6..12].copy_from_slice(&attacker.0);
    }
    let by_mac = label_frames(&ten, &LabelRule::address(&attacker.to_string()).unwrap()).unwrap();
    assert_eq!(by_mac.iter().filter(|&&l| l).count(), 3);
    assert!(by_mac[1] && by_mac[4] && by_mac[8]);
    assert!(matches!(
        LabelRule::address("10.0.0.300"),
        Err(Error::InvalidRule(_))
    ));
}

fn window(frames: &[RawFrame], from_s: f64, to_s: f64) -> (u64, u64) {
    let t0 = frames[0].timestamp_us;
    (t0 + (from_s * 1e6) as u64, t0 + (to_s * 1e6) as u64)
}

#[test]
fn dos_inserts_intensity_times_span_frames() {
    let frames = trace();
    let (start_us, end_us) = window(&frames, 0.2, 1.2);
    let spec = InjectionSpec {
        kind: AttackKind::Dos,
        target: InjectionTarget::Host(Address::Ip(plc_ip(1))),
        intensity: 100.0,
        start_us,
        end_us,
        seed: 4,
    };
    let (out, labels) = inject_anomalies(&frames, &spec).unwrap();
    assert_eq!(out.len(), frames.len() + 100);
    assert_eq!(labels.iter().filter(|&&l| l).count(), 100);
    assert!(out.iter().enumerate().all(|(i, f)| f.index == i as u64));
    assert!(out
        .windows(2)
        .all(|w| w[0].timestamp_us <= w[1].timestamp_us));

    let trace_macs: BTreeSet<MacAddr> = frames
        .iter()
        .map(|f| parse(&f.data).unwrap().src_mac)
        .collect();
    let attacker = parse(&out[labels.iter().position(|&l| l).unwrap()].data).unwrap();
    assert!(!trace_macs.contains(&attacker.src_mac));
    for (f, &l) in out.iter().zip(&labels) {
        let p = parse(&f.data).unwrap();
        assert_eq!(p.src_mac == attacker.src_mac, l);
        let h = p.ipv4.unwrap();
        if l {
            assert_eq!(h.protocol, 17);
            assert_eq!(h.dst, plc_ip(1));
            assert!((start_us..=end_us).contains(&f.timestamp_us));
        }
    }
}

#[test]
fn drop_fraction_zero_is_identity() {
    let frames = trace();
    let (start_us, end_us) = window(&frames, 0.1, 0.9);
    let spec = InjectionSpec {
        kind: AttackKind::Drop,
        target: InjectionTarget::Flow(poll_flow(0)),
        intensity: 0.0,
        start_us,
        end_us,
        seed: 1,
    };
    let (out, labels) = inject_anomalies(&frames, &spec).unwrap();
    assert_eq!(out, frames);
    assert!(labels.iter().all(|&l| !l));
}

#[test]
fn drop_labels_gap_neighbours() {
    let frames = trace();
    let (start_us, end_us) = window(&frames, 0.1, 0.9);
    let spec = InjectionSpec {
        kind: AttackKind::Drop,
        target: InjectionTarget::Flow(poll_flow(2)),
        intensity: 0.5,
        start_us,
        end_us,
        seed: 3,
    };
    let (out, labels) = inject_anomalies(&frames, &spec).unwrap();
    let dropped = frames.len() - out.len();
    assert!(dropped > 0);
    let survivors: BTreeSet<u64> = out.iter().map(|f| f.timestamp_us).collect();
    for (i, f) in out.iter().enumerate() {
        let orig = frames
            .iter()
            .position(|g| g.timestamp_us == f.timestamp_us)
            .unwrap();
        let before_gap = frames
            .get(orig + 1)
            .is_some_and(|g| !survivors.contains(&g.timestamp_us));
        let after_gap = orig > 0 && !survivors.contains(&frames[orig - 1].timestamp_us);
        assert_eq!(labels[i], before_gap || after_gap, "frame {i}");
    }
}

#[test]
fn eavesdrop_duplicates_follow_originals() {
    let frames = trace();
    let (start_us, end_us) = window(&frames, 0.0, 0.64);
    let spec = InjectionSpec {
        kind: AttackKind::Eavesdrop,
        target: InjectionTarget::Flow(poll_flow(3)),
        intensity: 1.0,
        start_us,
        end_us,
        seed: 9,
    };
    let k = frames
        .iter()
        .filter(|f| (start_us..=end_us).contains(&f.timestamp_us))
        .filter(|f| {
            pcapae_core::traffic::packet::flow_key(f).is_some_and(|(key, _)| key == poll_flow(3))
        })
        .count();
    assert!(k > 0);
    let (out, labels) = inject_anomalies(&frames, &spec).unwrap();
    assert_eq!(out.len(), frames.len() + k);
    assert_eq!(labels.iter().filter(|&&l| l).count(), k);
    for i in (0..out.len()).filter(|&i| labels[i]) {
        assert_eq!(out[i].data[6..], out[i - 1].data[6..]);
        assert_ne!(out[i].data[..6], out[i - 1].data[..6]);
        assert_eq!(parse(&out[i - 1].data).unwrap().dst_mac, plc_mac(3));
    }
}

#[test]
fn window_outside_trace_is_rejected() {
    let frames = trace();
    let last = frames.last().unwrap().timestamp_us;
    let spec = InjectionSpec {
        kind: AttackKind::Dos,
        target: InjectionTarget::Host(Address::Mac(hmi_mac())),
        intensity: 10.0,
        start_us: last - 10,
        end_us: last + 10,
        seed: 0,
    };
    assert!(matches!(
        inject_anomalies(&frames, &spec),
        Err(Error::InvalidWindow(_))
    ));
}

#[test]
fn injected_trace_round_trip_keeps_label_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let frames = trace();
    let (start_us, end_us) = window(&frames, 0.3, 0.5);
    let spec = InjectionSpec {
        kind: AttackKind::Dos,
        target: InjectionTarget::Flow(poll_flow(0)),
        intensity: 200.0,
        start_us,
        end_us,
        seed: 11,
    };
    let (out, labels) = inject_anomalies(&frames, &spec).unwrap();
    write_pcap(&out, dir.path().join("x.pcap")).unwrap();
    write_labels(&labels, dir.path().join("x.labels")).unwrap();
    let back = read_pcap(dir.path().join("x.pcap")).unwrap();
    let back_labels = read_labels(dir.path().join("x.labels")).unwrap();
    assert_eq!(back, out);
    assert_eq!(back_labels, labels);
}

fn arb_frames() -> impl Strategy<Value = Vec<RawFrame>> {
    prop::collection::vec(
        (prop::collection::vec(any::<u8>(), 14..300), 0u64..5_000_000),
        0..20,
    )
    .prop_map(|v| {
        let mut ts = 1_000_000u64;
        v.into_iter()
            .enumerate()
            .map(|(i, (data, gap))| {
                ts += gap;
                RawFrame::new(i as u64, ts, data)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn pcap_round_trip_is_identity(frames in arb_frames()) {
        let mut buf = Vec::new();
        write_pcap_to(&frames, &mut buf).unwrap();
        let back: Vec<RawFrame> = PcapReader::new(&buf[..]).unwrap().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, frames);
    }

    #[test]
    fn stats_ignore_frame_order(seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let frames = trace();
        let mut shuffled = frames.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = compute_stats(&frames, None).unwrap();
        let b = compute_stats(&shuffled, None).unwrap();
        prop_assert_eq!(
            (a.frame_count, a.distinct_macs, a.distinct_ips, a.distinct_protocols, a.tcp_flows, a.udp_flows),
            (b.frame_count, b.distinct_macs, b.distinct_ips, b.distinct_protocols, b.tcp_flows, b.udp_flows)
        );
        prop_assert!((a.atu_mean - b.atu_mean).abs() < 1e-9);
        prop_assert!((a.atu_std - b.atu_std).abs() < 1e-9);
    }

    #[test]
    fn injection_is_deterministic_and_dos_labels_match_attacker(seed in any::<u64>(), intensity in 1.0f64..400.0) {
        let frames = trace();
        let (start_us, end_us) = window(&frames, 0.2, 0.7);
        let spec = InjectionSpec {
            kind: AttackKind::Dos,
            target: InjectionTarget::Host(Address::Ip(plc_ip(0))),
            intensity,
            start_us,
            end_us,
            seed,
        };
        let first = inject_anomalies(&frames, &spec).unwrap();
        let second = inject_anomalies(&frames, &spec).unwrap();
        prop_assert_eq!(&first, &second);
        let (out, labels) = first;
        let sources: BTreeSet<MacAddr> = out
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l)
            .map(|(f, _)| parse(&f.data).unwrap().src_mac)
            .collect();
        prop_assert!(sources.len() <= 1);
        for (f, &l) in out.iter().zip(&labels) {
            prop_assert_eq!(sources.contains(&parse(&f.data).unwrap().src_mac), l);
        }
    }
}
