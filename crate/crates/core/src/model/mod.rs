//! The Danube3 decoder: embeddings, pre-norm transformer blocks with
//! grouped-query attention and a SwiGLU MLP, final norm and LM head.

mod cache;
mod config;

use rayon::prelude::*;

pub use cache::{KvCache, LayerKv};
pub use config::{ModelConfig, DANUBE3_4B, DANUBE3_500M};

use crate::error::{Error, Result};
use crate::gguf::{GgufBuilder, GgufFile, MetadataValue};
use crate::ops::{self, matmul_f32, rms_norm_in_place, softmax_in_place, RopeParams};
use crate::tensor::{DType, Tensor};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    /// `[n_heads * head_size, hidden]`, rows in half-split RoPE order.
    pub wq: Tensor,
    /// `[n_kv_heads * head_size, hidden]`, rows in half-split RoPE order.
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ffn_norm: Vec<f32>,
    pub w_gate: Tensor,
    pub w_up: Tensor,
    pub w_down: Tensor,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    rope: RopeParams,
    pub token_embd: Tensor,
    pub layers: Vec<LayerWeights>,
    pub output_norm: Vec<f32>,
    /// LM head; `None` when tied to `token_embd`.
    pub output: Option<Tensor>,
}

/// Reorders Q/K rows from the interleaved layout written by the standard
/// HF→GGUF converter back to half-split pairing.
pub fn unpermute_qk(t: &Tensor, n_heads: usize) -> Result<Tensor> {
    permute_rows(t, n_heads, |half, i, j| (j * half + i, 2 * i + j))
}

/// Inverse of [`unpermute_qk`]: half-split rows to converter layout.
pub fn permute_qk(t: &Tensor, n_heads: usize) -> Result<Tensor> {
    permute_rows(t, n_heads, |half, i, j| (2 * i + j, j * half + i))
}

/// `map(half, i, j)` returns (destination row, source row) within a head.
fn permute_rows(t: &Tensor, n_heads: usize, map: impl Fn(usize, usize, usize) -> (usize, usize)) -> Result<Tensor> {
    let rows = t.rows();
    if n_heads == 0 || rows % n_heads != 0 || (rows / n_heads) % 2 != 0 {
        return Err(Error::shape(format!("cannot split {rows} rows into {n_heads} heads of even size")));
    }
    let head = rows / n_heads;
    let half = head / 2;
    let stride = t.bytes().len() / rows;
    let mut out = vec![0u8; t.bytes().len()];
    for h in 0..n_heads {
        for i in 0..half {
            for j in 0..2 {
                let (dst, src) = map(half, i, j);
                let (dst, src) = (h * head + dst, h * head + src);
                out[dst * stride..(dst + 1) * stride].copy_from_slice(t.row_bytes(src));
            }
        }
    }
    Tensor::new(t.shape().to_vec(), t.dtype(), out)
}

fn expect_shape(name: &str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::Validation(format!(
            "tensor {name} has shape {:?}, config implies {shape:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl Model {
    pub fn new(
        config: ModelConfig,
        token_embd: Tensor,
        layers: Vec<LayerWeights>,
        output_norm: Vec<f32>,
        output: Option<Tensor>,
    ) -> Result<Self> {
        config.validate()?;
        let rope = RopeParams::new(config.rope_theta, config.head_size)?;
        let model = Self { config, rope, token_embd, layers, output_norm, output };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let (h, i, q, kv) = (c.hidden_size, c.intermediate_size, c.q_dim(), c.kv_dim());
        expect_shape("token_embd", &self.token_embd, &[c.vocab_size, h])?;
        if self.layers.len() != c.n_layers {
            return Err(Error::Validation(format!(
                "{} layers present, config says {}",
                self.layers.len(),
                c.n_layers
            )));
        }
        for (l, w) in self.layers.iter().enumerate() {
            if w.attn_norm.len() != h || w.ffn_norm.len() != h {
                return Err(Error::Validation(format!("layer {l}: norm weights must have {h} entries")));
            }
            expect_shape(&format!("blk.{l}.attn_q"), &w.wq, &[q, h])?;
            expect_shape(&format!("blk.{l}.attn_k"), &w.wk, &[kv, h])?;
            expect_shape(&format!("blk.{l}.attn_v"), &w.wv, &[kv, h])?;
            expect_shape(&format!("blk.{l}.attn_output"), &w.wo, &[h, q])?;
            expect_shape(&format!("blk.{l}.ffn_gate"), &w.w_gate, &[i, h])?;
            expect_shape(&format!("blk.{l}.ffn_up"), &w.w_up, &[i, h])?;
            expect_shape(&format!("blk.{l}.ffn_down"), &w.w_down, &[h, i])?;
        }
        if self.output_norm.len() != h {
            return Err(Error::Validation(format!("output_norm must have {h} entries")));
        }
        if let Some(out) = &self.output {
            expect_shape("output", out, &[c.vocab_size, h])?;
        }
        if self.output.is_none() != c.tied_embeddings {
            return Err(Error::Validation("output head presence disagrees with tied_embeddings".into()));
        }
        Ok(())
    }

    /// Builds a model from a parsed GGUF file.
    pub fn from_gguf(g: &GgufFile) -> Result<Self> {
        let config = ModelConfig::from_gguf(g)?;
        if let Some(bias) = g.tensors.iter().find(|t| t.name.ends_with(".bias")) {
            return Err(Error::Validation(format!(
                "bias tensor {:?} found; this architecture has no biases",
                bias.name
            )));
        }
        let converter_layout = g.get("general.architecture").and_then(MetadataValue::as_str) == Some("llama");
        let vector = |name: &str| -> Result<Vec<f32>> {
            let t = g.tensor(name)?;
            if t.shape().len() != 1 {
                return Err(Error::Validation(format!("{name} must be 1-D, got {:?}", t.shape())));
            }
            t.to_f32_vec()
        };
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let name = |s: &str| format!("blk.{l}.{s}.weight");
            let mut wq = g.tensor(&name("attn_q"))?;
            let mut wk = g.tensor(&name("attn_k"))?;
            expect_shape(&name("attn_q"), &wq, &[config.q_dim(), config.hidden_size])?;
            expect_shape(&name("attn_k"), &wk, &[config.kv_dim(), config.hidden_size])?;
            if converter_layout {
                wq = unpermute_qk(&wq, config.n_heads)?;
                wk = unpermute_qk(&wk, config.n_kv_heads)?;
            }
            layers.push(LayerWeights {
                attn_norm: vector(&name("attn_norm"))?,
                wq,
                wk,
                wv: g.tensor(&name("attn_v"))?,
                wo: g.tensor(&name("attn_output"))?,
                ffn_norm: vector(&name("ffn_norm"))?,
                w_gate: g.tensor(&name("ffn_gate"))?,
                w_up: g.tensor(&name("ffn_up"))?,
                w_down: g.tensor(&name("ffn_down"))?,
            });
        }
        let output = match g.tensor_info("output.weight") {
            Some(_) => Some(g.tensor("output.weight")?),
            None => None,
        };
        Self::new(
            config,
            g.tensor("token_embd.weight")?,
            layers,
            vector("output_norm.weight")?,
            output,
        )
    }

    /// Serializes the weights with llama naming, Q/K rows in converter
    /// layout. Norms are written as F32.
    pub fn to_gguf(&self, tokenizer: &Tokenizer, extra: Vec<(String, MetadataValue)>) -> Result<GgufFile> {
        let mut b = GgufBuilder::new();
        for (k, v) in self.config.to_metadata().into_iter().chain(tokenizer.to_metadata()).chain(extra) {
            b.metadata(k, v);
        }
        let vector = |v: &[f32]| Tensor::from_f32(vec![v.len()], v);
        b.tensor("token_embd.weight", &self.token_embd);
        for (l, w) in self.layers.iter().enumerate() {
            let name = |s: &str| format!("blk.{l}.{s}.weight");
            b.tensor(name("attn_norm"), &vector(&w.attn_norm)?);
            b.tensor(name("attn_q"), &permute_qk(&w.wq, self.config.n_heads)?);
            b.tensor(name("attn_k"), &permute_qk(&w.wk, self.config.n_kv_heads)?);
            b.tensor(name("attn_v"), &w.wv);
            b.tensor(name("attn_output"), &w.wo);
            b.tensor(name("ffn_norm"), &vector(&w.ffn_norm)?);
            b.tensor(name("ffn_gate"), &w.w_gate);
            b.tensor(name("ffn_up"), &w.w_up);
            b.tensor(name("ffn_down"), &w.w_down);
        }
        b.tensor("output_norm.weight", &vector(&self.output_norm)?);
        if let Some(out) = &self.output {
            b.tensor("output.weight", out);
        }
        b.build()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn rope(&self) -> &RopeParams {
        &self.rope
    }

    /// Storage type of the projection weights (from the first layer's Q).
    pub fn weight_dtype(&self) -> DType {
        self.layers.first().map(|l| l.wq.dtype()).unwrap_or(self.token_embd.dtype())
    }

    pub fn new_cache(&self, capacity: usize) -> Result<KvCache> {
        KvCache::new(&self.config, capacity)
    }

    fn embed(&self, tokens: &[u32]) -> Result<Vec<f32>> {
        let h = self.config.hidden_size;
        let mut x = vec![0f32; tokens.len() * h];
        for (row, &t) in x.chunks_mut(h).zip(tokens) {
            if t as usize >= self.config.vocab_size {
                return Err(Error::Input(format!(
                    "token id {t} is outside the vocabulary of {}",
                    self.config.vocab_size
                )));
            }
            self.token_embd.dequantize_row_into(t as usize, row)?;
        }
        Ok(x)
    }

    /// Grouped-query attention for `layer` over `x` (`seq × hidden`, already
    /// normalised). Keys and values for the new rows are written to the
    /// cache at positions `cache.len()..`; the caller advances the cache.
    pub fn attention_block(&self, layer: usize, x: &[f32], cache: &mut KvCache) -> Result<Vec<f32>> {
        let c = &self.config;
        let w = &self.layers[layer];
        let seq = x.len() / c.hidden_size;
        cache.check_room(seq)?;
        let start = cache.len();
        let hs = c.head_size;

        let mut q = matmul_f32(x, seq, &w.wq)?;
        let mut k = matmul_f32(x, seq, &w.wk)?;
        let v = matmul_f32(x, seq, &w.wv)?;
        for s in 0..seq {
            self.rope.rotate_heads(&mut q[s * c.q_dim()..(s + 1) * c.q_dim()], start + s);
            self.rope.rotate_heads(&mut k[s * c.kv_dim()..(s + 1) * c.kv_dim()], start + s);
        }

        for s in 0..seq {
            for h in 0..c.n_kv_heads {
                let dst = cache.index(h, start + s);
                let src = s * c.kv_dim() + h * hs;
                let kv = &mut cache.layers[layer];
                kv.k[dst..dst + hs].copy_from_slice(&k[src..src + hs]);
                kv.v[dst..dst + hs].copy_from_slice(&v[src..src + hs]);
            }
        }

        let kv = &cache.layers[layer];
        let cache_ref = &*cache;
        let group = c.group_size();
        let scale = 1.0 / (hs as f32).sqrt();
        let heads: Vec<Vec<f32>> = (0..c.n_heads)
            .into_par_iter()
            .map(|h| {
                let kvh = h / group;
                let mut out = vec![0f32; seq * hs];
                let mut scores = Vec::with_capacity(start + seq);
                for s in 0..seq {
                    let pos = start + s;
                    let qh = &q[s * c.q_dim() + h * hs..s * c.q_dim() + (h + 1) * hs];
                    scores.clear();
                    for t in 0..=pos {
                        let at = cache_ref.index(kvh, t);
                        let kt = &kv.k[at..at + hs];
                        let mut dot = 0f32;
                        for (a, b) in qh.iter().zip(kt) {
                            dot += a * b;
                        }
                        scores.push(dot * scale);
                    }
                    softmax_in_place(&mut scores);
                    let o = &mut out[s * hs..(s + 1) * hs];
                    for (t, &p) in scores.iter().enumerate() {
                        let at = cache_ref.index(kvh, t);
                        for (acc, vt) in o.iter_mut().zip(&kv.v[at..at + hs]) {
                            *acc += p * vt;
                        }
                    }
                }
                out
            })
            .collect();

        let mut merged = vec![0f32; seq * c.q_dim()];
        for (h, head) in heads.iter().enumerate() {
            for s in 0..seq {
                merged[s * c.q_dim() + h * hs..s * c.q_dim() + (h + 1) * hs]
                    .copy_from_slice(&head[s * hs..(s + 1) * hs]);
            }
        }
        matmul_f32(&merged, seq, &w.wo)
    }

    /// SwiGLU feed-forward: `down(silu(gate(x)) ⊙ up(x))`.
    pub fn mlp_block(&self, layer: usize, x: &[f32]) -> Result<Vec<f32>> {
        let w = &self.layers[layer];
        let seq = x.len() / self.config.hidden_size;
        let mut gate = matmul_f32(x, seq, &w.w_gate)?;
        let up = matmul_f32(x, seq, &w.w_up)?;
        for (g, u) in gate.iter_mut().zip(&up) {
            *g = ops::silu_scalar(*g) * u;
        }
        matmul_f32(&gate, seq, &w.w_down)
    }

    /// Runs the decoder over `tokens` and returns final-normed hidden
    /// states (`seq × hidden`).
    fn hidden_states(&self, tokens: &[u32], cache: &mut KvCache) -> Result<Vec<f32>> {
        if tokens.is_empty() {
            return Err(Error::Input("forward needs at least one token".into()));
        }
        cache.check_room(tokens.len())?;
        let c = &self.config;
        let mut x = self.embed(tokens)?;
        for (l, w) in self.layers.iter().enumerate() {
            let mut h = x.clone();
            rms_norm_in_place(&mut h, &w.attn_norm, c.rms_eps)?;
            let attn = self.attention_block(l, &h, cache)?;
            x.iter_mut().zip(&attn).for_each(|(a, b)| *a += b);

            let mut h = x.clone();
            rms_norm_in_place(&mut h, &w.ffn_norm, c.rms_eps)?;
            let mlp = self.mlp_block(l, &h)?;
            x.iter_mut().zip(&mlp).for_each(|(a, b)| *a += b);
        }
        cache.advance(tokens.len());
        rms_norm_in_place(&mut x, &self.output_norm, c.rms_eps)?;
        Ok(x)
    }

    fn lm_head(&self) -> &Tensor {
        self.output.as_ref().unwrap_or(&self.token_embd)
    }

    /// Logits for every input position (`seq × vocab`).
    pub fn forward(&self, tokens: &[u32], cache: &mut KvCache) -> Result<Vec<f32>> {
        let x = self.hidden_states(tokens, cache)?;
        matmul_f32(&x, tokens.len(), self.lm_head())
    }

    /// Logits for the last input position only.
    pub fn forward_last(&self, tokens: &[u32], cache: &mut KvCache) -> Result<Vec<f32>> {
        let x = self.hidden_states(tokens, cache)?;
        let h = self.config.hidden_size;
        matmul_f32(&x[x.len() - h..], 1, self.lm_head())
    }

    pub fn count_parameters(&self) -> u64 {
        self.config.count_parameters()
    }
}

/// Loads model weights and the vocabulary from a GGUF file.
pub fn load_model(g: &GgufFile) -> Result<(Model, Tokenizer)> {
    let model = Model::from_gguf(g)?;
    let tokenizer = Tokenizer::from_gguf(g)?;
    if tokenizer.vocab_size() != model.config().vocab_size {
        return Err(Error::Validation(format!(
            "vocabulary has {} tokens but the model expects {}",
            tokenizer.vocab_size(),
            model.config().vocab_size
        )));
    }
    Ok((model, tokenizer))
}
