mod common;

use danube_core::fixtures;
use danube_core::tokenizer::TokenType;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn round_trip_over_10k_strings() {
    let tok = fixtures::tokenizer();
    let corpus = common::tokenizer_corpus(1, 12_000);
    let mut byte_fallback = 0;
    for s in &corpus {
        let ids = tok.encode(s, true);
        assert_eq!(tok.decode(&ids).unwrap(), *s, "{s:?} -> {ids:?}");
        if ids.iter().any(|&i| tok.token_type(i) == Some(TokenType::Byte)) {
            byte_fallback += 1;
        }
        assert!(ids[1..].iter().all(|&i| tok.token_type(i) != Some(TokenType::Control)));
    }
    assert!(byte_fallback > 1000, "{byte_fallback}");
}

#[test]
fn streaming_matches_batch_on_encoded_text() {
    let tok = fixtures::tokenizer();
    for s in common::tokenizer_corpus(2, 3000) {
        let ids = tok.encode(&s, false);
        let mut dec = tok.stream_decoder();
        let mut out = String::new();
        for &id in &ids {
            out.push_str(&dec.push(id).unwrap());
        }
        out.push_str(&dec.finish());
        assert_eq!(out, tok.decode(&ids).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3000))]

    // arbitrary id sequences include stray continuation bytes and truncated
    // multi-byte sequences
    #[test]
    fn streaming_matches_batch_on_arbitrary_ids(seed in any::<u64>(), len in 0usize..40) {
        let tok = fixtures::tokenizer();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<u32> = (0..len)
            .map(|_| if rng.gen_bool(0.6) { rng.gen_range(3..259) } else { rng.gen_range(0..tok.vocab_size() as u32) })
            .collect();
        let mut dec = tok.stream_decoder();
        let mut out = String::new();
        for &id in &ids {
            out.push_str(&dec.push(id).unwrap());
        }
        out.push_str(&dec.finish());
        prop_assert_eq!(out, tok.decode(&ids).unwrap());
    }

    #[test]
    fn encode_is_deterministic_and_in_range(s in "\\PC{0,30}") {
        let tok = fixtures::tokenizer();
        let a = tok.encode(&s, false);
        prop_assert_eq!(&a, &tok.encode(&s, false));
        prop_assert!(a.iter().all(|&i| (i as usize) < tok.vocab_size()));
        if !s.contains('\u{2581}') {
            prop_assert_eq!(tok.decode(&a).unwrap(), s);
        }
    }
}

#[test]
fn gguf_vocabulary_round_trip() {
    let cfg = fixtures::tiny_config(fixtures::tokenizer().vocab_size());
    let g = fixtures::tiny_gguf(cfg, 1, danube_core::DType::F32);
    let tok = danube_core::tokenizer::Tokenizer::from_gguf(&g).unwrap();
    let orig = fixtures::tokenizer();
    for s in common::tokenizer_corpus(3, 500) {
        assert_eq!(tok.encode(&s, true), orig.encode(&s, true));
    }
}
