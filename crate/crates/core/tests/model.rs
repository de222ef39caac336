mod common;

use danube_core::fixtures::{self, random_model, tiny_config};
use danube_core::gguf::parse_gguf;
use danube_core::model::LayerWeights;
use danube_core::requant::requantize;
use danube_core::{load_model, DType, Model, ModelConfig, QuantType, Tensor, DANUBE3_4B, DANUBE3_500M};

fn vocab() -> usize {
    fixtures::tokenizer().vocab_size()
}

fn max_rel_err(a: &[f32], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn parameter_counts_match_tensor_sum() {
    assert_eq!(DANUBE3_4B.count_parameters(), 3_961_839_360);
    assert_eq!(common::parameter_oracle(&DANUBE3_4B), 3_961_839_360);
    assert_eq!(format!("{:.2}", DANUBE3_4B.count_parameters() as f64 / 1e9), "3.96");
    assert_eq!(DANUBE3_500M.count_parameters(), 513_590_784);
    assert_eq!(common::parameter_oracle(&DANUBE3_500M), 513_590_784);
    let tied = ModelConfig { tied_embeddings: true, ..DANUBE3_500M };
    assert_eq!(tied.count_parameters(), common::parameter_oracle(&tied));
    let shapes: u64 = DANUBE3_4B.tensor_shapes().iter().map(|(_, s)| s.iter().product::<usize>() as u64).sum();
    assert_eq!(shapes, DANUBE3_4B.count_parameters());
}

#[test]
fn published_configs() {
    let c = DANUBE3_4B;
    assert_eq!(
        (c.n_layers, c.hidden_size, c.intermediate_size, c.n_heads, c.n_kv_heads, c.head_size),
        (24, 3840, 10240, 32, 8, 120)
    );
    assert_eq!((c.vocab_size, c.max_context, c.rope_theta), (32000, 8192, 100000.0));
    let c = DANUBE3_500M;
    assert_eq!(
        (c.n_layers, c.hidden_size, c.intermediate_size, c.n_heads, c.n_kv_heads, c.head_size),
        (16, 1536, 4096, 16, 8, 96)
    );
    assert_eq!((c.vocab_size, c.max_context, c.rope_theta), (32000, 8192, 100000.0));
}

#[test]
fn engine_matches_float64_reference() {
    let small = ModelConfig {
        hidden_size: 8,
        intermediate_size: 16,
        n_heads: 2,
        n_kv_heads: 1,
        head_size: 4,
        ..tiny_config(vocab())
    };
    for (cfg, seed) in [(small, 3), (tiny_config(vocab()), 4)] {
        let model = random_model(&cfg, seed, DType::F32);
        let prompt = common::random_prompts(seed, 1, 24, cfg.vocab_size).remove(0);
        let mut cache = model.new_cache(prompt.len()).unwrap();
        let got = model.forward(&prompt, &mut cache).unwrap();
        let want: Vec<f64> = common::reference_forward(&model, &prompt).concat();
        let err = max_rel_err(&got, &want);
        assert!(err < 1e-5, "hidden {}: relative error {err}", cfg.hidden_size);
    }
}

#[test]
fn group_size_one_matches_mha_oracle() {
    let cfg = ModelConfig { n_kv_heads: 4, ..tiny_config(vocab()) };
    assert_eq!(cfg.group_size(), 1);
    let model = random_model(&cfg, 11, DType::F32);
    for prompt in common::random_prompts(5, 4, 32, cfg.vocab_size) {
        let mut cache = model.new_cache(prompt.len()).unwrap();
        let got = model.forward(&prompt, &mut cache).unwrap();
        let want: Vec<f64> = common::reference_forward(&model, &prompt).concat();
        let err = max_rel_err(&got, &want);
        assert!(err < 1e-5, "relative error {err}");
    }
}

fn repeat_kv_rows(t: &Tensor, kv_heads: usize, group: usize) -> Tensor {
    let vals = t.to_f32_vec().unwrap();
    let per_head = t.rows() / kv_heads * t.cols();
    let mut out = Vec::with_capacity(vals.len() * group);
    for h in 0..kv_heads {
        for _ in 0..group {
            out.extend_from_slice(&vals[h * per_head..(h + 1) * per_head]);
        }
    }
    Tensor::from_f32(vec![t.rows() * group, t.cols()], &out).unwrap()
}

#[test]
fn grouped_attention_equals_replicated_heads() {
    let cfg = tiny_config(vocab());
    let gqa = random_model(&cfg, 21, DType::F32);
    let g = cfg.group_size();
    let mha_cfg = ModelConfig { n_kv_heads: cfg.n_heads, ..cfg.clone() };
    let layers = gqa
        .layers
        .iter()
        .map(|l| LayerWeights {
            wk: repeat_kv_rows(&l.wk, cfg.n_kv_heads, g),
            wv: repeat_kv_rows(&l.wv, cfg.n_kv_heads, g),
            ..l.clone()
        })
        .collect();
    let mha = Model::new(mha_cfg, gqa.token_embd.clone(), layers, gqa.output_norm.clone(), gqa.output.clone()).unwrap();
    for prompt in common::random_prompts(8, 3, 40, cfg.vocab_size) {
        let a = gqa.forward(&prompt, &mut gqa.new_cache(64).unwrap()).unwrap();
        let b = mha.forward(&prompt, &mut mha.new_cache(64).unwrap()).unwrap();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0f32, f32::max);
        assert!(diff <= 1e-5, "max diff {diff}");
    }
}

#[test]
fn incremental_decode_matches_batch() {
    let cfg = tiny_config(vocab());
    for dtype in [DType::F32, DType::Q8_0, DType::Q4_0] {
        let model = random_model(&cfg, 31, dtype);
        let v = cfg.vocab_size;
        for len in [1, 2, 7, 33, 64] {
            let prompt = common::random_prompts(len as u64, 1, len, v).remove(0);
            let batch = model.forward(&prompt, &mut model.new_cache(len).unwrap()).unwrap();
            let mut cache = model.new_cache(len).unwrap();
            for (i, &t) in prompt.iter().enumerate() {
                let step = model.forward_last(&[t], &mut cache).unwrap();
                let want = &batch[i * v..(i + 1) * v];
                let scale = want.iter().fold(1f32, |m, x| m.max(x.abs()));
                let err = step.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max) / scale;
                assert!(err <= 1e-4, "{dtype} len {len} pos {i}: {err}");
            }
        }
    }
}

#[test]
fn chunked_prefill_matches_batch() {
    let cfg = tiny_config(vocab());
    let model = random_model(&cfg, 32, DType::F32);
    let v = cfg.vocab_size;
    let prompt = common::random_prompts(2, 1, 40, v).remove(0);
    let batch = model.forward(&prompt, &mut model.new_cache(40).unwrap()).unwrap();
    let mut cache = model.new_cache(40).unwrap();
    model.forward(&prompt[..17], &mut cache).unwrap();
    let rest = model.forward(&prompt[17..], &mut cache).unwrap();
    for (a, b) in rest.iter().zip(&batch[17 * v..]) {
        assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0));
    }
}

#[test]
fn attention_is_causal() {
    let cfg = tiny_config(vocab());
    let model = random_model(&cfg, 41, DType::F32);
    let v = cfg.vocab_size;
    let mut prompt = common::random_prompts(9, 1, 20, v).remove(0);
    let a = model.forward(&prompt, &mut model.new_cache(20).unwrap()).unwrap();
    prompt[12] = (prompt[12] + 1) % v as u32;
    let b = model.forward(&prompt, &mut model.new_cache(20).unwrap()).unwrap();
    assert_eq!(a[..12 * v], b[..12 * v]);
    assert_ne!(a[12 * v..13 * v], b[12 * v..13 * v]);
}

#[test]
fn q8_0_kl_below_pinned_threshold() {
    let cfg = tiny_config(vocab());
    let g = fixtures::tiny_gguf(cfg.clone(), common::KL_MODEL_SEED, DType::F32);
    let (f32_model, _) = load_model(&g).unwrap();
    let (q, _) = requantize(&g, QuantType::Q8_0).unwrap();
    let q = parse_gguf(q.to_bytes().unwrap().into()).unwrap();
    let (q8_model, _) = load_model(&q).unwrap();
    assert_eq!(q8_model.weight_dtype(), DType::Q8_0);
    let prompts = common::kl_prompts(cfg.vocab_size);
    let kl = common::mean_kl(&f32_model, &q8_model, &prompts);
    println!("mean KL(F32 || Q8_0) = {kl:e}");
    assert!(kl < common::Q8_KL_THRESHOLD, "{kl}");

    let (q4, _) = requantize(&g, QuantType::Q4_0).unwrap();
    let (q4_model, _) = load_model(&q4).unwrap();
    let kl4 = common::mean_kl(&f32_model, &q4_model, &prompts);
    println!("mean KL(F32 || Q4_0) = {kl4:e}");
    assert!(kl4 > kl);
}

#[test]
fn cached_prefix_is_bit_identical() {
    let cfg = tiny_config(vocab());
    for dtype in [DType::F32, DType::Q8_0] {
        let model = random_model(&cfg, 33, dtype);
        let v = cfg.vocab_size;
        let prompt = common::random_prompts(3, 1, 30, v).remove(0);
        let batch = model.forward(&prompt, &mut model.new_cache(30).unwrap()).unwrap();
        let mut cache = model.new_cache(30).unwrap();
        model.forward(&prompt[..11], &mut cache).unwrap();
        let rest = model.forward(&prompt[11..], &mut cache).unwrap();
        assert_eq!(rest, batch[11 * v..]);
        let mut cache = model.new_cache(30).unwrap();
        for (i, &t) in prompt.iter().enumerate() {
            assert_eq!(model.forward_last(&[t], &mut cache).unwrap(), batch[i * v..(i + 1) * v]);
        }
    }
}
