mod common;

use bytes::Bytes;
use common::gguf_gen::{build, sample_file, tensor_plan, value};
use danube_core::fixtures;
use danube_core::gguf::{parse_gguf, read_gguf};
use danube_core::{DType, Error};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn write_read_write_is_byte_identical(
        meta in prop::collection::vec(("[a-z_.]{1,16}", value()), 0..8),
        tensors in prop::collection::vec(tensor_plan(), 0..5),
        alignment in prop::option::of(prop::sample::select(vec![1u32, 8, 16, 32, 64])),
    ) {
        let file = build(meta, tensors, alignment);
        let first = file.to_bytes().unwrap();
        let parsed = parse_gguf(Bytes::from(first.clone())).unwrap();
        prop_assert_eq!(parsed.tensors.clone(), file.tensors.clone());
        prop_assert_eq!(parsed.metadata.len(), file.metadata.len());
        let second = parsed.to_bytes().unwrap();
        prop_assert_eq!(first, second);
        for t in &parsed.tensors {
            prop_assert_eq!(t.offset % parsed.alignment(), 0);
        }
    }
}

#[test]
fn truncations_always_error() {
    let full = sample_file();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..10_000 {
        // every prefix of the header, then random cuts through the payload
        let cut = if i < 2_000 { i * full.len() / 2_000 } else { rng.gen_range(0..full.len()) };
        match parse_gguf(Bytes::copy_from_slice(&full[..cut])) {
            Err(Error::Corrupt { offset, .. }) => assert!(offset <= cut as u64),
            Err(Error::Format(_)) => assert!(cut < 4),
            Err(e) => panic!("cut {cut}: unexpected error {e}"),
            Ok(_) => panic!("cut {cut} of {} parsed", full.len()),
        }
    }
}

#[test]
fn byte_corruption_never_panics() {
    let full = sample_file();
    let header = parse_gguf(Bytes::from(full.clone())).unwrap().header_len() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..10_000 {
        let mut b = full.clone();
        for _ in 0..rng.gen_range(1..4) {
            let at = rng.gen_range(0..header);
            b[at] = rng.gen();
        }
        let _ = parse_gguf(Bytes::from(b));
    }
}

#[test]
fn file_round_trip_through_mmap() {
    let g = fixtures::tiny_gguf(fixtures::tiny_config(fixtures::tokenizer().vocab_size()), 6, DType::F16);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.gguf");
    g.write(&path).unwrap();
    let back = read_gguf(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), g.to_bytes().unwrap());
    assert_eq!(std::fs::metadata(&path).unwrap().len(), g.header_len() + g.data.len() as u64);
}
