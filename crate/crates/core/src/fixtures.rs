//! Small synthetic vocabularies, random-weight models and text corpora.
//!
//! Used by the test suites, the benchmark and the acceptance harness; the
//! real Danube3 checkpoints are far too large for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::generation::DANUBE_CHAT_TEMPLATE;
use crate::gguf::{GgufFile, MetadataValue};
use crate::model::{LayerWeights, Model, ModelConfig};
use crate::tensor::{DType, Tensor};
use crate::tokenizer::{TokenType, Tokenizer, SPACE_MARKER};

pub const WORDS: &[&str] = &[
    "the", "and", "of", "to", "in", "is", "that", "it", "was", "for", "on", "are", "with", "as", "his",
    "they", "be", "at", "one", "have", "this", "from", "or", "had", "by", "word", "but", "what", "some",
    "we", "can", "out", "other", "were", "all", "there", "when", "up", "use", "your", "how", "said",
    "an", "each", "she", "which", "do", "their", "time", "if", "will", "way", "about", "many", "then",
    "them", "write", "would", "like", "so", "these", "her", "long", "make", "thing", "see", "him", "two",
    "has", "look", "more", "day", "could", "go", "come", "did", "number", "sound", "no", "most",
    "people", "my", "over", "know", "water", "than", "call", "first", "who", "may", "down", "side",
    "been", "now", "find", "river", "small", "model", "language", "token", "quant", "phone", "run",
    "Hello", "world", "The", "A", "It", "In", "This", "We",
];

const SUFFIXES: &[&str] = &["ing", "ed", "er", "tion", "ly", "es", "<|prompt|>", "<|answer|>", "<|system|>"];
const EXTRA_CHARS: &[char] = &['é', 'è', 'ü', 'ö', 'ß', 'ñ', 'ç', '中', '文', '日', '本', 'α', 'β'];

/// Builds the synthetic SentencePiece vocabulary: `<unk>`, `<s>`, `</s>`,
/// the 256 byte tokens, then characters and prefix-closed word pieces.
pub fn tokenizer() -> Tokenizer {
    let mut tokens: Vec<String> = vec!["<unk>".into(), "<s>".into(), "</s>".into()];
    let mut types = vec![TokenType::Unknown, TokenType::Control, TokenType::Control];
    for b in 0..=255u8 {
        tokens.push(format!("<0x{b:02X}>"));
        types.push(TokenType::Byte);
    }
    let mut pieces: Vec<String> = vec![SPACE_MARKER.to_string()];
    pieces.extend((0x21u8..=0x7e).map(|c| (c as char).to_string()));
    pieces.extend(EXTRA_CHARS.iter().map(|c| c.to_string()));
    let mut add_closure = |word: String| {
        let chars: Vec<char> = word.chars().collect();
        for n in 2..=chars.len() {
            let p: String = chars[..n].iter().collect();
            if !pieces.contains(&p) {
                pieces.push(p);
            }
        }
    };
    for w in WORDS {
        add_closure(format!("{SPACE_MARKER}{w}"));
    }
    for s in SUFFIXES {
        add_closure(s.to_string());
    }
    let mut scores = vec![0f32; tokens.len()];
    for (i, p) in pieces.into_iter().enumerate() {
        tokens.push(p);
        types.push(TokenType::Normal);
        scores.push(-(i as f32));
    }
    Tokenizer::new(tokens, scores, types, 1, 2).expect("fixture vocabulary is valid")
}

/// Two-layer GQA configuration whose matrices are all block-aligned.
pub fn tiny_config(vocab_size: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        hidden_size: 64,
        intermediate_size: 128,
        n_heads: 4,
        n_kv_heads: 2,
        head_size: 16,
        vocab_size,
        rope_theta: 100000.0,
        max_context: 256,
        rms_eps: 1e-5,
        tied_embeddings: false,
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32, dtype: DType) -> Tensor {
    let vals = uniform(rng, rows * cols, scale);
    let dtype = if dtype.is_quantized() && cols % crate::quant::QK != 0 { DType::F32 } else { dtype };
    Tensor::quantize(vec![rows, cols], &vals, dtype).expect("fixture weights encode")
}

/// Random-weight model for `config`, matrices stored as `dtype`.
pub fn random_model(config: &ModelConfig, seed: u64, dtype: DType) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = config;
    let (h, i) = (c.hidden_size, c.intermediate_size);
    let s = |k: usize| 1.0 / (k as f32).sqrt();
    let norm = |rng: &mut ChaCha8Rng| uniform(rng, h, 0.1).into_iter().map(|v| 1.0 + v).collect::<Vec<_>>();
    let token_embd = matrix(&mut rng, c.vocab_size, h, 1.0, dtype);
    let layers = (0..c.n_layers)
        .map(|_| LayerWeights {
            attn_norm: norm(&mut rng),
            wq: matrix(&mut rng, c.q_dim(), h, s(h), dtype),
            wk: matrix(&mut rng, c.kv_dim(), h, s(h), dtype),
            wv: matrix(&mut rng, c.kv_dim(), h, s(h), dtype),
            wo: matrix(&mut rng, h, c.q_dim(), s(c.q_dim()), dtype),
            ffn_norm: norm(&mut rng),
            w_gate: matrix(&mut rng, i, h, s(h), dtype),
            w_up: matrix(&mut rng, i, h, s(h), dtype),
            w_down: matrix(&mut rng, h, i, s(i), dtype),
        })
        .collect();
    let output_norm = norm(&mut rng);
    let output = (!c.tied_embeddings).then(|| matrix(&mut rng, c.vocab_size, h, 4.0 * s(h), dtype));
    Model::new(config.clone(), token_embd, layers, output_norm, output).expect("fixture model is consistent")
}

/// Random model paired with the fixture tokenizer.
pub fn tiny_model(config: ModelConfig, seed: u64, dtype: DType) -> (Model, Tokenizer) {
    let tok = tokenizer();
    assert_eq!(config.vocab_size, tok.vocab_size(), "config must use the fixture vocabulary size");
    (random_model(&config, seed, dtype), tok)
}

/// A complete GGUF image of a random model with vocabulary and chat
/// template metadata.
pub fn tiny_gguf(config: ModelConfig, seed: u64, dtype: DType) -> GgufFile {
    let (model, tok) = tiny_model(config, seed, dtype);
    let file_type = match dtype {
        DType::F32 => 0,
        DType::F16 => 1,
        DType::Q4_0 => 2,
        DType::Q8_0 => 7,
    };
    let extra = vec![
        ("general.name".to_string(), MetadataValue::String("danube3-tiny-random".into())),
        ("general.file_type".to_string(), MetadataValue::U32(file_type)),
        ("tokenizer.chat_template".to_string(), MetadataValue::String(DANUBE_CHAT_TEMPLATE.into())),
    ];
    model.to_gguf(&tok, extra).expect("fixture serializes")
}

/// Pseudo-English text drawn from the fixture word list.
pub fn corpus(seed: u64, n_words: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for i in 0..n_words {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(WORDS[rng.gen_range(0..WORDS.len())]);
        match rng.gen_range(0..20) {
            0 => out.push('.'),
            1 => out.push(','),
            2 => out.push('\n'),
            _ => {}
        }
    }
    out
}
