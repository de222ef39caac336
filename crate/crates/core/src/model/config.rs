use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gguf::{GgufFile, MetadataValue};

/// Architecture hyperparameters of a Danube3-family decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_size: usize,
    pub vocab_size: usize,
    pub rope_theta: f32,
    pub max_context: usize,
    pub rms_eps: f32,
    pub tied_embeddings: bool,
}

pub const DANUBE3_4B: ModelConfig = ModelConfig {
    n_layers: 24,
    hidden_size: 3840,
    intermediate_size: 10240,
    n_heads: 32,
    n_kv_heads: 8,
    head_size: 120,
    vocab_size: 32000,
    rope_theta: 100000.0,
    max_context: 8192,
    rms_eps: 1e-5,
    tied_embeddings: false,
};

pub const DANUBE3_500M: ModelConfig = ModelConfig {
    n_layers: 16,
    hidden_size: 1536,
    intermediate_size: 4096,
    n_heads: 16,
    n_kv_heads: 8,
    head_size: 96,
    vocab_size: 32000,
    rope_theta: 100000.0,
    max_context: 8192,
    rms_eps: 1e-5,
    tied_embeddings: false,
};

impl ModelConfig {
    /// Query heads per key/value head.
    pub fn group_size(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    pub fn q_dim(&self) -> usize {
        self.n_heads * self.head_size
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_size
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("hidden_size", self.hidden_size),
            ("intermediate_size", self.intermediate_size),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("head_size", self.head_size),
            ("vocab_size", self.vocab_size),
            ("max_context", self.max_context),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("{name} must be positive")));
        }
        if self.n_kv_heads > self.n_heads {
            return Err(Error::Validation(format!(
                "kv heads ({}) cannot exceed attention heads ({})",
                self.n_kv_heads, self.n_heads
            )));
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return Err(Error::Validation(format!(
                "attention heads ({}) must be a multiple of kv heads ({})",
                self.n_heads, self.n_kv_heads
            )));
        }
        if self.head_size % 2 != 0 {
            return Err(Error::Validation(format!("head size {} must be even for RoPE", self.head_size)));
        }
        if !(self.rope_theta > 0.0) || !(self.rms_eps >= 0.0) {
            return Err(Error::Validation("rope_theta must be positive and rms_eps non-negative".into()));
        }
        Ok(())
    }

    /// Trainable parameters: embeddings, per-layer projections and norms,
    /// final norm.
    pub fn count_parameters(&self) -> u64 {
        let (v, h, i, l) = (
            self.vocab_size as u64,
            self.hidden_size as u64,
            self.intermediate_size as u64,
            self.n_layers as u64,
        );
        let q = self.q_dim() as u64;
        let kv = self.kv_dim() as u64;
        let embeddings = v * h * if self.tied_embeddings { 1 } else { 2 };
        let per_layer = h * q + 2 * h * kv + q * h + 3 * h * i + 2 * h;
        embeddings + l * per_layer + h
    }

    /// Weight tensors in llama naming order with row-major shapes.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (h, v, i) = (self.hidden_size, self.vocab_size, self.intermediate_size);
        let mut out = vec![("token_embd.weight".to_string(), vec![v, h])];
        for l in 0..self.n_layers {
            let p = |s: &str| format!("blk.{l}.{s}.weight");
            out.push((p("attn_norm"), vec![h]));
            out.push((p("attn_q"), vec![self.q_dim(), h]));
            out.push((p("attn_k"), vec![self.kv_dim(), h]));
            out.push((p("attn_v"), vec![self.kv_dim(), h]));
            out.push((p("attn_output"), vec![h, self.q_dim()]));
            out.push((p("ffn_norm"), vec![h]));
            out.push((p("ffn_gate"), vec![i, h]));
            out.push((p("ffn_up"), vec![i, h]));
            out.push((p("ffn_down"), vec![h, i]));
        }
        out.push(("output_norm.weight".to_string(), vec![h]));
        if !self.tied_embeddings {
            out.push(("output.weight".to_string(), vec![v, h]));
        }
        out
    }

    /// Reads the `<arch>.*` hyperparameter keys.
    pub fn from_gguf(g: &GgufFile) -> Result<Self> {
        let arch = g
            .get("general.architecture")
            .and_then(MetadataValue::as_str)
            .ok_or_else(|| Error::Schema("missing general.architecture".into()))?;
        let int = |key: &str| -> Result<usize> {
            let full = format!("{arch}.{key}");
            g.get(&full)
                .and_then(MetadataValue::as_u64)
                .map(|v| v as usize)
                .ok_or_else(|| Error::Schema(format!("missing or non-integer key {full}")))
        };
        let float = |key: &str| -> Option<f32> { g.get(&format!("{arch}.{key}")).and_then(MetadataValue::as_f64).map(|v| v as f32) };

        let hidden_size = int("embedding_length")?;
        let n_heads = int("attention.head_count")?;
        let n_kv_heads = int("attention.head_count_kv").unwrap_or(n_heads);
        let head_size = match int("attention.key_length") {
            Ok(v) => v,
            Err(_) if n_heads > 0 => hidden_size / n_heads,
            Err(e) => return Err(e),
        };
        let vocab_size = match int("vocab_size") {
            Ok(v) => v,
            Err(_) => g
                .get("tokenizer.ggml.tokens")
                .and_then(MetadataValue::as_array)
                .map(|a| a.values.len())
                .ok_or_else(|| Error::Schema(format!("missing {arch}.vocab_size and tokenizer.ggml.tokens")))?,
        };
        let rope_theta = float("rope.freq_base")
            .ok_or_else(|| Error::Schema(format!("missing key {arch}.rope.freq_base")))?;
        let cfg = ModelConfig {
            n_layers: int("block_count")?,
            hidden_size,
            intermediate_size: int("feed_forward_length")?,
            n_heads,
            n_kv_heads,
            head_size,
            vocab_size,
            rope_theta,
            max_context: int("context_length")?,
            rms_eps: float("attention.layer_norm_rms_epsilon").unwrap_or(1e-5),
            tied_embeddings: g.tensor_info("output.weight").is_none(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Metadata entries for a llama-architecture file.
    pub fn to_metadata(&self) -> Vec<(String, MetadataValue)> {
        let u = |v: usize| MetadataValue::U32(v as u32);
        vec![
            ("general.architecture".into(), MetadataValue::String("llama".into())),
            ("llama.block_count".into(), u(self.n_layers)),
            ("llama.context_length".into(), u(self.max_context)),
            ("llama.embedding_length".into(), u(self.hidden_size)),
            ("llama.feed_forward_length".into(), u(self.intermediate_size)),
            ("llama.attention.head_count".into(), u(self.n_heads)),
            ("llama.attention.head_count_kv".into(), u(self.n_kv_heads)),
            ("llama.attention.key_length".into(), u(self.head_size)),
            ("llama.attention.value_length".into(), u(self.head_size)),
            ("llama.rope.dimension_count".into(), u(self.head_size)),
            ("llama.rope.freq_base".into(), MetadataValue::F32(self.rope_theta)),
            ("llama.attention.layer_norm_rms_epsilon".into(), MetadataValue::F32(self.rms_eps)),
            ("llama.vocab_size".into(), u(self.vocab_size)),
        ]
    }
}
