mod common;

use attnscope_core::format::{DType, Layout, MAGIC};
use attnscope_core::{open_dump, write_dump, DumpWriter};
use proptest::prelude::*;

fn encode(dtype: DType, v: f64) -> Vec<u8> {
    let mut out = Vec::new();
    dtype.encode_into(v, &mut out);
    out
}

/// Value at (s, b, h, t, pos) in the "mod 7" fixture.
fn mod7(s: usize, b: usize, h: usize, t: usize, p: usize) -> f64 {
    ((s + b + h + t + p) % 7) as f64
}

#[test]
fn mod7_fixture_round_trips_and_matches_size_formula() {
    let dir = tempfile::tempdir().unwrap();
    let h = common::header(2, 3, 2, 4, [2, 3, 4], [4, 12, 16], DType::F32);
    let pos = h.dims.positions();
    let mut chunks = Vec::new();
    for s in 0..2 {
        for b in 0..3 {
            let mut bytes = Vec::new();
            for head in 0..2 {
                for t in 0..4 {
                    for p in 0..pos {
                        bytes.extend(encode(DType::F32, mod7(s, b, head, t, p)));
                    }
                }
            }
            assert_eq!(bytes.len(), 768);
            chunks.push((s, b, bytes));
        }
    }
    let path = write_dump(dir.path().join("m.attn"), h.clone(), chunks).unwrap();
    let hdr_len = h.to_json_bytes().len() as u64;
    assert_eq!(
        std::fs::metadata(&path).unwrap().len(),
        8 + 8 + hdr_len + 6 * 4 + 6 * 768
    );

    let store = open_dump(&path).unwrap();
    assert_eq!(store.header(), &h);
    for s in 0..2 {
        for b in 0..3 {
            for head in 0..2 {
                for t in 0..4 {
                    let m = store.get_map(t, s, b, head).unwrap();
                    for (p, v) in m.values().iter().enumerate() {
                        assert_eq!(*v, mod7(s, b, head, t, p));
                    }
                }
            }
        }
    }
}

#[test]
fn appendix_shaped_header_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let h = common::header(25, 30, 12, 1, [1, 1, 1], [61, 480, 832], DType::F16);
    let mut w = DumpWriter::create(dir.path().join("big.attn"), h.clone()).unwrap();
    let chunk = vec![0u8; h.chunk_bytes()];
    for s in 0..25 {
        for b in 0..30 {
            w.write_chunk(s, b, &chunk).unwrap();
        }
    }
    let path = w.finish().unwrap();
    let store = open_dump(path).unwrap();
    assert_eq!(store.header().dims.steps, 25);
    assert_eq!(store.header().dims.blocks, 30);
    assert_eq!(store.header().dims.heads, 12);
}

#[test]
fn f16_round_trip_is_within_dtype_precision() {
    let dir = tempfile::tempdir().unwrap();
    let h = common::header(1, 2, 1, 2, [1, 2, 3], [1, 4, 6], DType::F16);
    let pos = h.dims.positions();
    let value = |b: usize, t: usize, p: usize| 0.001 + 0.137 * (b * 17 + t * 5 + p) as f64;
    let chunks = (0..2).map(|b| {
        let mut bytes = Vec::new();
        for t in 0..2 {
            for p in 0..pos {
                bytes.extend(encode(DType::F16, value(b, t, p)));
            }
        }
        (0, b, bytes)
    });
    let path = write_dump(dir.path().join("h.attn"), h, chunks).unwrap();
    let store = open_dump(path).unwrap();
    for b in 0..2 {
        for t in 0..2 {
            let m = store.get_map(t, 0, b, 0).unwrap();
            for (p, v) in m.values().iter().enumerate() {
                let want = value(b, t, p);
                // f16 has an 11-bit significand
                assert!((v - want).abs() <= want.abs() * 2f64.powi(-11), "{v} vs {want}");
            }
        }
    }
}

#[test]
fn header_bytes_follow_magic_and_length_word() {
    let dir = tempfile::tempdir().unwrap();
    let h = common::header(1, 1, 1, 1, [1, 1, 2], [1, 1, 2], DType::F32);
    let path = write_dump(dir.path().join("x.attn"), h.clone(), [(0, 0, vec![0u8; 8])]).unwrap();
    let bytes = std::fs::read(path).unwrap();
    assert_eq!(&bytes[..8], MAGIC);
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let parsed: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
    assert_eq!(parsed["dims"]["latent_w"], 2);
    assert_eq!(parsed["generation"]["seed"], 58);
    let crc = u32::from_le_bytes(bytes[16 + len..20 + len].try_into().unwrap());
    assert_eq!(crc, crc32fast::hash(&[0u8; 8]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Closed-form row offsets agree with a sequential scan of the data region.
    #[test]
    fn addressing_matches_sequential_scan(
        steps in 1usize..3, blocks in 1usize..4, heads in 1usize..3, tokens in 1usize..4,
        lf in 1usize..3, lh in 1usize..3, lw in 1usize..4,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let h = common::header(steps, blocks, heads, tokens, [lf, lh, lw], [lf, lh, lw], DType::F32);
        let pos = h.dims.positions();
        let mut id = 0u32;
        let mut chunks = Vec::new();
        for s in 0..steps {
            for b in 0..blocks {
                let mut bytes = Vec::new();
                for _ in 0..heads * tokens * pos {
                    bytes.extend((id as f32).to_le_bytes());
                    id += 1;
                }
                chunks.push((s, b, bytes));
            }
        }
        let path = write_dump(dir.path().join("p.attn"), h.clone(), chunks).unwrap();
        let raw = std::fs::read(&path).unwrap();
        let store = open_dump(&path).unwrap();
        let layout = Layout::new(&h, h.to_json_bytes().len() as u64);

        let mut offset = layout.data_offset as usize;
        let mut next = 0u32;
        for s in 0..steps {
            for b in 0..blocks {
                for head in 0..heads {
                    for t in 0..tokens {
                        prop_assert_eq!(layout.row_offset(&h, s, b, head, t) as usize, offset);
                        let m = store.get_map(t, s, b, head).unwrap();
                        for v in m.values() {
                            let scanned = f32::from_le_bytes(raw[offset..offset + 4].try_into().unwrap());
                            prop_assert_eq!(scanned as u32, next);
                            prop_assert_eq!(*v, scanned as f64);
                            offset += 4;
                            next += 1;
                        }
                    }
                }
            }
        }
        prop_assert_eq!(offset, raw.len());
    }
}
