use std::net::Ipv4Addr;

use pcapae_core::fragment::{
    byte_fragments, flow_fragments, fragment, normalize_byte, read_store, store_from_bytes,
    store_to_bytes, windows, write_store, FragmentMode, FragmentStore, Span, CELLS,
};
use pcapae_core::traffic::packet::{build_frame, flow_key, FrameSpec};
use pcapae_core::traffic::synth::{periodic_trace, SynthConfig};
use pcapae_core::traffic::{FlowKey, MacAddr, RawFrame, Transport};
use pcapae_core::Error;
use proptest::prelude::*;

fn udp(src_port: u16, payload_len: usize, fill: u8) -> Vec<u8> {
    build_frame(&FrameSpec {
        src_mac: MacAddr([2, 0, 0, 0, 0, 1]),
        dst_mac: MacAddr([2, 0, 0, 0, 0, 2]),
        flow: FlowKey {
            transport: Transport::Udp,
            src_ip: Ipv4Addr::new(10, 0, 0, 1),
            src_port,
            dst_ip: Ipv4Addr::new(10, 0, 0, 2),
            dst_port: 9000,
        },
        ip_id: 0,
        ttl: 64,
        tcp: (0, 0, 0),
        payload: &vec![fill; payload_len],
    })
}

fn frames_of(lens: &[usize]) -> Vec<RawFrame> {
    lens.iter()
        .enumerate()
        .map(|(i, &n)| {
            RawFrame::new(
                i as u64,
                i as u64,
                (0..n).map(|b| (b % 251) as u8 + 1).collect(),
            )
        })
        .collect()
}

#[test]
fn exact_fit_frame_gives_one_unpadded_fragment() {
    let s = byte_fragments(&frames_of(&[1024]));
    assert_eq!(s.len(), 1);
    assert!(s.fragments[0].cells.iter().all(|&c| c != 0));
    assert_eq!(
        s.fragments[0].provenance,
        vec![Span {
            frame_index: 0,
            offset: 0,
            length: 1024
        }]
    );
}

#[test]
fn two_600_byte_frames_roll_into_a_second_fragment() {
    let s = byte_fragments(&frames_of(&[600, 600]));
    assert_eq!(s.len(), 2);
    assert_eq!(
        s.fragments[0].provenance,
        vec![
            Span {
                frame_index: 0,
                offset: 0,
                length: 600
            },
            Span {
                frame_index: 1,
                offset: 0,
                length: 424
            }
        ]
    );
    assert_eq!(
        s.fragments[1].provenance,
        vec![Span {
            frame_index: 1,
            offset: 424,
            length: 176
        }]
    );
    assert!(s.fragments[1].cells[176..].iter().all(|&c| c == 0));
    assert_eq!(
        s.fragments[1].cells[..176]
            .iter()
            .filter(|&&c| c != 0)
            .count(),
        176
    );
}

#[test]
fn long_frames_are_truncated_to_1024_bytes() {
    let frames = frames_of(&[1500]);
    let s = byte_fragments(&frames);
    assert_eq!(s.len(), 1);
    assert_eq!(s.fragments[0].cells[..], frames[0].data[..1024]);
}

#[test]
fn sixteen_packets_fill_one_flow_fragment() {
    let frames: Vec<RawFrame> = (0..16)
        .map(|i| RawFrame::new(i, i, udp(4000, 80, 0x5a)))
        .collect();
    let s = flow_fragments(&frames);
    assert_eq!(s.len(), 1);
    assert_eq!(s.fragments[0].provenance.len(), 16);
    assert!(s.fragments[0].provenance.iter().all(|sp| sp.length == 64));
    // every 64-byte slot opens with the UDP header, then payload bytes
    for slot in s.fragments[0].cells.chunks(64) {
        assert_eq!(&slot[0..2], &4000u16.to_be_bytes());
        assert!(slot[8..].iter().all(|&b| b == 0x5a));
    }
}

#[test]
fn short_ip_payload_is_zero_padded_in_its_slot() {
    // 8-byte UDP header + 32 payload bytes = 40 IP-payload bytes
    let frames = vec![RawFrame::new(0, 0, udp(4000, 32, 0xee))];
    let s = flow_fragments(&frames);
    let cells = &s.fragments[0].cells;
    assert!(cells[8..40].iter().all(|&b| b == 0xee));
    assert!(cells[40..64].iter().all(|&b| b == 0));
    assert!(cells[64..].iter().all(|&b| b == 0));
    assert_eq!(s.fragments[0].provenance[0].length, 40);
}

#[test]
fn interleaved_flows_produce_one_fragment_each() {
    let frames: Vec<RawFrame> = (0..32)
        .map(|i| RawFrame::new(i, i, udp(if i % 2 == 0 { 4000 } else { 4001 }, 64, i as u8)))
        .collect();
    let s = flow_fragments(&frames);
    assert_eq!(s.len(), 2);
    for (f, port) in s.fragments.iter().zip([4000u16, 4001]) {
        assert_eq!(f.provenance.len(), 16);
        for sp in &f.provenance {
            let (key, _) = flow_key(&frames[sp.frame_index as usize]).unwrap();
            assert_eq!(key.src_port, port);
        }
    }
}

#[test]
fn flow_mode_skips_non_flow_frames() {
    let mut frames = vec![RawFrame::new(0, 0, vec![0xff; 60])];
    frames.push(RawFrame::new(1, 1, udp(1, 10, 1)));
    let s = fragment(&frames, FragmentMode::Flow);
    assert_eq!(s.skipped_frames, 1);
    assert_eq!(s.len(), 1);
}

#[test]
fn normalize_examples() {
    assert_eq!(normalize_byte(0xff), 1.0);
    assert_eq!(normalize_byte(0), 0.0);
    assert!((normalize_byte(0x33) - 0.2).abs() < 1e-7);
    let all: Vec<f32> = (0..=255u8).map(normalize_byte).collect();
    assert!(all.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn window_examples() {
    assert_eq!(windows(7, 3).unwrap().len(), 5);
    assert_eq!(windows(9, 1).unwrap().len(), 9);
    assert!(windows(2, 3).unwrap().is_empty());
    assert!(matches!(windows(5, 0), Err(Error::InvalidParameter(_))));
}

fn synthetic_store(mode: FragmentMode) -> FragmentStore {
    fragment(
        &periodic_trace(&SynthConfig {
            cycles: 2,
            ..SynthConfig::default()
        }),
        mode,
    )
}

#[test]
fn store_round_trips_and_keeps_mode() {
    let dir = tempfile::tempdir().unwrap();
    for mode in [FragmentMode::Byte, FragmentMode::Flow] {
        let mut store = synthetic_store(mode);
        store.fragments.truncate(3);
        let path = dir.path().join(format!("{}.pae", mode.name()));
        write_store(&store, &path).unwrap();
        let back = read_store(&path).unwrap();
        assert_eq!(back.mode, mode);
        assert_eq!(back.fragments, store.fragments);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(store_to_bytes(&back).unwrap(), bytes);
    }
}

#[test]
fn tampered_store_fails_its_checksum() {
    let store = synthetic_store(FragmentMode::Byte);
    let mut bytes = store_to_bytes(&store).unwrap();
    bytes[100] ^= 0x01;
    assert!(matches!(
        store_from_bytes(&bytes),
        Err(Error::CorruptStore(_))
    ));
    let mut magic = store_to_bytes(&store).unwrap();
    magic[0] = b'X';
    assert!(matches!(
        store_from_bytes(&magic),
        Err(Error::UnsupportedStore(_))
    ));
}

fn arb_frames() -> impl Strategy<Value = Vec<RawFrame>> {
    prop::collection::vec(prop::collection::vec(any::<u8>(), 14..2000), 0..12).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, d)| RawFrame::new(i as u64, i as u64 * 10, d))
            .collect()
    })
}

proptest! {
    #[test]
    fn byte_mode_conserves_bytes_and_provenance(frames in arb_frames()) {
        let s = byte_fragments(&frames);
        let covered: usize = s.fragments.iter().flat_map(|f| &f.provenance).map(|sp| sp.length as usize).sum();
        let expected: usize = frames.iter().map(|f| f.data.len().min(1024)).sum();
        prop_assert_eq!(covered, expected);
        prop_assert_eq!(s.len(), expected.div_ceil(CELLS));
        for f in &s.fragments {
            let mut pos = 0;
            for sp in &f.provenance {
                let src = &frames[sp.frame_index as usize].data;
                let (o, l) = (sp.offset as usize, sp.length as usize);
                prop_assert_eq!(&f.cells[pos..pos + l], &src[o..o + l]);
                pos += l;
            }
            prop_assert!(f.cells[pos..].iter().all(|&c| c == 0));
        }
        prop_assert_eq!(byte_fragments(&frames), s);
    }

    #[test]
    fn flow_mode_provenance_reproduces_ip_payload(
        ports in prop::collection::vec(4000u16..4003, 1..60),
        lens in prop::collection::vec(0usize..100, 60),
    ) {
        let frames: Vec<RawFrame> = ports
            .iter()
            .zip(&lens)
            .enumerate()
            .map(|(i, (&p, &l))| RawFrame::new(i as u64, i as u64, udp(p, l, i as u8)))
            .collect();
        let s = flow_fragments(&frames);
        let packets: usize = s.fragments.iter().map(|f| f.provenance.len()).sum();
        prop_assert_eq!(packets, frames.len());
        for f in &s.fragments {
            prop_assert!(f.provenance.len() <= 16);
            for (i, sp) in f.provenance.iter().enumerate() {
                let src = &frames[sp.frame_index as usize].data;
                let (o, l) = (sp.offset as usize, sp.length as usize);
                prop_assert_eq!(&f.cells[64 * i..64 * i + l], &src[o..o + l]);
                prop_assert!(f.cells[64 * i + l..64 * (i + 1)].iter().all(|&c| c == 0));
            }
        }
    }

    #[test]
    fn window_count_law(len in 0usize..200, n in 1usize..20) {
        let w = windows(len, n).unwrap();
        prop_assert_eq!(w.len(), (len + 1).saturating_sub(n));
        prop_assert!(w.iter().all(|x| x.start + x.n <= len));
    }

    #[test]
    fn store_bytes_round_trip(frames in arb_frames()) {
        let s = byte_fragments(&frames);
        let bytes = store_to_bytes(&s).unwrap();
        let back = store_from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back.fragments, &s.fragments);
        prop_assert_eq!(store_to_bytes(&back).unwrap(), bytes);
    }
}
