//! Perplexity evaluation and size/quality reports.

use std::fmt;

use bytes::Bytes;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gguf::{parse_gguf, GgufFile};
use crate::model::{load_model, Model, ModelConfig};
use crate::quant::{predict_model_size, QuantPolicy, QuantType};
use crate::requant::requantize;
use crate::tokenizer::Tokenizer;

/// Anything that maps a token window to next-token logits.
pub trait LogitSource: Sync {
    fn vocab_size(&self) -> usize;

    /// Logits (`tokens.len() × vocab`) for a window evaluated from an empty
    /// context.
    fn window_logits(&self, tokens: &[u32]) -> Result<Vec<f32>>;
}

impl LogitSource for Model {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn window_logits(&self, tokens: &[u32]) -> Result<Vec<f32>> {
        let mut cache = self.new_cache(tokens.len())?;
        self.forward(tokens, &mut cache)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityConfig {
    /// Window length in tokens.
    pub window: usize,
    /// Replace the first token of every window with BOS.
    pub bos_per_window: bool,
    /// Evaluate at most this many windows.
    pub max_windows: Option<usize>,
}

impl Default for PerplexityConfig {
    fn default() -> Self {
        Self { window: 512, bos_per_window: true, max_windows: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowScore {
    pub index: usize,
    /// Offset of the window in the tokenized corpus.
    pub start: usize,
    pub scored: usize,
    pub nll_sum: f64,
}

impl WindowScore {
    pub fn perplexity(&self) -> f64 {
        (self.nll_sum / self.scored as f64).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerplexityReport {
    pub corpus: String,
    pub window: usize,
    pub tokens_scored: usize,
    /// Mean negative log-likelihood, nats per token.
    pub mean_nll: f64,
    pub perplexity: f64,
    pub windows: Vec<WindowScore>,
}

impl PerplexityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Schema(format!("perplexity report: {e}")))
    }
}

impl fmt::Display for PerplexityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for w in &self.windows {
            writeln!(f, "[{}] {:.4}", w.index + 1, w.perplexity())?;
        }
        writeln!(f, "corpus: {}", self.corpus)?;
        writeln!(f, "window: {} tokens, {} windows, {} tokens scored", self.window, self.windows.len(), self.tokens_scored)?;
        writeln!(f, "mean nll: {:.6}", self.mean_nll)?;
        write!(f, "perplexity: {:.4}", self.perplexity)
    }
}

/// Negative log-probability of `target` under `logits`, in f64.
pub fn token_nll(logits: &[f32], target: u32) -> Result<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if logits.iter().any(|v| v.is_nan()) || !max.is_finite() {
        return Err(Error::Numeric("logits are NaN or not finite".into()));
    }
    let lse = logits.iter().map(|&l| (l as f64 - max).exp()).sum::<f64>().ln();
    let t = *logits
        .get(target as usize)
        .ok_or_else(|| Error::Input(format!("target {target} outside vocabulary")))? as f64;
    Ok(-(t - max - lse))
}

/// Perplexity of an already tokenized corpus.
///
/// The corpus is cut into consecutive windows of `window` tokens (a
/// trailing partial window is dropped). Each window is evaluated on its
/// own; only predictions made from the second half are scored, so every
/// scored token sees at least `window / 2` tokens of context.
pub fn perplexity_tokens(
    src: &dyn LogitSource,
    tokens: &[u32],
    bos: u32,
    corpus: &str,
    cfg: &PerplexityConfig,
) -> Result<PerplexityReport> {
    let w = cfg.window;
    if w < 4 {
        return Err(Error::Input(format!("window must be at least 4 tokens, got {w}")));
    }
    if tokens.len() < w {
        return Err(Error::Input(format!("corpus has {} tokens, window needs {w}", tokens.len())));
    }
    let mut n = tokens.len() / w;
    if let Some(m) = cfg.max_windows {
        n = n.min(m.max(1));
    }
    let vocab = src.vocab_size();
    let first = w / 2;

    let windows: Vec<WindowScore> = (0..n)
        .into_par_iter()
        .map(|k| {
            let start = k * w;
            let mut chunk = tokens[start..start + w].to_vec();
            if cfg.bos_per_window {
                chunk[0] = bos;
            }
            let logits = src.window_logits(&chunk)?;
            if logits.len() != w * vocab {
                return Err(Error::Shape(format!("logit source returned {} values, expected {}", logits.len(), w * vocab)));
            }
            let mut nll_sum = 0.0;
            for j in first..w - 1 {
                nll_sum += token_nll(&logits[j * vocab..(j + 1) * vocab], chunk[j + 1])?;
            }
            Ok(WindowScore { index: k, start, scored: w - 1 - first, nll_sum })
        })
        .collect::<Result<_>>()?;

    let tokens_scored: usize = windows.iter().map(|s| s.scored).sum();
    let total: f64 = windows.iter().map(|s| s.nll_sum).sum();
    let mean_nll = total / tokens_scored as f64;
    Ok(PerplexityReport {
        corpus: corpus.to_string(),
        window: w,
        tokens_scored,
        mean_nll,
        perplexity: mean_nll.exp(),
        windows,
    })
}

/// Tokenizes `text` (with BOS) and measures perplexity.
pub fn perplexity(
    src: &dyn LogitSource,
    tok: &Tokenizer,
    text: &str,
    corpus: &str,
    cfg: &PerplexityConfig,
) -> Result<PerplexityReport> {
    let tokens = tok.encode(text, true);
    perplexity_tokens(src, &tokens, tok.bos_id(), corpus, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeQualityRow {
    pub method: QuantType,
    pub bytes: u64,
    /// `None` for methods the engine only accounts for.
    pub perplexity: Option<f64>,
}

impl SizeQualityRow {
    pub fn accounting_only(&self) -> bool {
        self.perplexity.is_none()
    }
}

/// Re-encodes `g` for every encodable target and measures size and
/// perplexity; other targets get a predicted size under llama.cpp's mixing
/// rules.
pub fn size_quality_table(
    g: &GgufFile,
    targets: &[QuantType],
    text: &str,
    corpus: &str,
    cfg: &PerplexityConfig,
) -> Result<Vec<SizeQualityRow>> {
    let config = ModelConfig::from_gguf(g)?;
    let mut rows = Vec::with_capacity(targets.len());
    for &method in targets {
        if method.encodable().is_none() {
            rows.push(SizeQualityRow {
                method,
                bytes: predict_model_size(&config, method, QuantPolicy::Reference),
                perplexity: None,
            });
            continue;
        }
        let (q, _) = requantize(g, method)?;
        let image = q.to_bytes()?;
        let bytes = image.len() as u64;
        let reloaded = parse_gguf(Bytes::from(image))?;
        let (model, tok) = load_model(&reloaded)?;
        let report = perplexity(&model, &tok, text, corpus, cfg)?;
        rows.push(SizeQualityRow { method, bytes, perplexity: Some(report.perplexity) });
    }
    Ok(rows)
}

/// Formats rows as a method / size / perplexity table.
pub fn format_size_quality(rows: &[SizeQualityRow]) -> String {
    let mut out = format!("{:<8} {:>12} {:>12}\n", "Method", "Size", "Perplexity");
    for r in rows {
        let size = if r.bytes >= 1_000_000_000 {
            format!("{:.2} GB", r.bytes as f64 / 1e9)
        } else if r.bytes >= 1_000_000 {
            format!("{:.2} MB", r.bytes as f64 / 1e6)
        } else {
            format!("{} B", r.bytes)
        };
        let ppl = r.perplexity.map_or("-".to_string(), |p| format!("{p:.4}"));
        out.push_str(&format!("{:<8} {:>12} {:>12}\n", r.method.name(), size, ppl));
    }
    out
}
