use std::collections::HashSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    /// 0 selects the argmax deterministically.
    pub temperature: f32,
    /// 0 disables top-k filtering.
    pub top_k: usize,
    pub top_p: f32,
    pub repeat_penalty: f32,
    /// How many recent tokens the repeat penalty looks at.
    pub repeat_window: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
    pub stop_sequences: Vec<String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_k: 40,
            top_p: 0.95,
            repeat_penalty: 1.1,
            repeat_window: 64,
            max_new_tokens: 256,
            seed: 0,
            stop_sequences: Vec::new(),
        }
    }
}

impl GenerationParams {
    /// Argmax decoding with no penalty.
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self { temperature: 0.0, top_k: 0, top_p: 1.0, repeat_penalty: 1.0, max_new_tokens, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::Input(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Input(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if !(self.repeat_penalty >= 1.0) || !self.repeat_penalty.is_finite() {
            return Err(Error::Input(format!("repeat_penalty must be >= 1, got {}", self.repeat_penalty)));
        }
        Ok(())
    }
}

fn argmax(logits: &[f32]) -> Option<u32> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &v) in logits.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.filter(|&(_, v)| v > f32::NEG_INFINITY).map(|(i, _)| i as u32)
}

/// Picks the next token.
///
/// Order: repeat penalty over the last `repeat_window` ids of `history`
/// (positive logits divided, negative multiplied), temperature, top-k,
/// top-p over the renormalised candidates, then a draw from `rng`.
pub fn sample_next(logits: &[f32], params: &GenerationParams, history: &[u32], rng: &mut ChaCha8Rng) -> Result<u32> {
    if logits.iter().any(|v| v.is_nan() || *v == f32::INFINITY) {
        return Err(Error::Numeric("logits contain NaN or +inf".into()));
    }
    let mut logits = logits.to_vec();
    if params.repeat_penalty != 1.0 && params.repeat_window > 0 {
        let window = &history[history.len().saturating_sub(params.repeat_window)..];
        let seen: HashSet<u32> = window.iter().copied().collect();
        for id in seen {
            if let Some(l) = logits.get_mut(id as usize) {
                *l = if *l > 0.0 { *l / params.repeat_penalty } else { *l * params.repeat_penalty };
            }
        }
    }

    if params.temperature == 0.0 {
        return argmax(&logits).ok_or_else(|| Error::Degenerate("all logits are -inf".into()));
    }

    let mut cand: Vec<(u32, f64)> = logits
        .iter()
        .enumerate()
        .filter(|(_, &l)| l > f32::NEG_INFINITY)
        .map(|(i, &l)| (i as u32, l as f64 / params.temperature as f64))
        .collect();
    if cand.is_empty() {
        return Err(Error::Degenerate("all logits are -inf".into()));
    }
    // descending by logit, ties by lower id
    cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if params.top_k > 0 {
        cand.truncate(params.top_k);
    }

    let max = cand[0].1;
    let mut probs: Vec<f64> = cand.iter().map(|&(_, l)| (l - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);

    if params.top_p < 1.0 {
        let mut cum = 0.0;
        let mut keep = probs.len();
        for (i, p) in probs.iter().enumerate() {
            cum += p;
            if cum >= params.top_p as f64 {
                keep = i + 1;
                break;
            }
        }
        probs.truncate(keep);
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
    }

    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return Ok(cand[i].0);
        }
    }
    Ok(cand[probs.len() - 1].0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn temperature_zero_is_argmax() {
        let logits = [0.1, 3.0, -1.0, 2.9];
        let p = GenerationParams { temperature: 0.0, top_k: 3, top_p: 0.2, ..Default::default() };
        assert_eq!(sample_next(&logits, &p, &[], &mut rng()).unwrap(), 1);
    }

    #[test]
    fn top_k_one_is_argmax() {
        let logits = [0.1, 3.0, -1.0, 2.9];
        let p = GenerationParams { temperature: 1.5, top_k: 1, repeat_penalty: 1.0, ..Default::default() };
        for _ in 0..50 {
            assert_eq!(sample_next(&logits, &p, &[], &mut rng()).unwrap(), 1);
        }
    }

    #[test]
    fn repeat_penalty_form() {
        // 3.0/2 = 1.5 < 2.9 so the penalised token loses
        let logits = [0.1, 3.0, -1.0, 2.9];
        let p = GenerationParams { temperature: 0.0, repeat_penalty: 2.0, repeat_window: 4, ..Default::default() };
        assert_eq!(sample_next(&logits, &p, &[1], &mut rng()).unwrap(), 3);
        // outside the window: no penalty
        assert_eq!(sample_next(&logits, &p, &[1, 0, 0, 0, 0], &mut rng()).unwrap(), 1);
        // negative logits get multiplied (more negative)
        let logits = [-1.0, -1.5];
        assert_eq!(sample_next(&logits, &p, &[0], &mut rng()).unwrap(), 1);
    }

    #[test]
    fn all_masked_is_degenerate() {
        let logits = [f32::NEG_INFINITY; 4];
        for t in [0.0, 1.0] {
            let p = GenerationParams { temperature: t, ..Default::default() };
            assert!(matches!(sample_next(&logits, &p, &[], &mut rng()), Err(Error::Degenerate(_))));
        }
    }

    #[test]
    fn top_p_keeps_smallest_prefix() {
        // probabilities 0.7, 0.2, 0.1: top_p 0.65 keeps only the first
        let logits = [7f32.ln(), 2f32.ln(), 1f32.ln()];
        let p = GenerationParams { temperature: 1.0, top_k: 0, top_p: 0.65, repeat_penalty: 1.0, ..Default::default() };
        let mut r = rng();
        for _ in 0..200 {
            assert_eq!(sample_next(&logits, &p, &[], &mut r).unwrap(), 0);
        }
    }

    #[test]
    fn params_validation() {
        assert!(GenerationParams::default().validate().is_ok());
        assert!(GenerationParams { top_p: 0.0, ..Default::default() }.validate().is_err());
        assert!(GenerationParams { temperature: -1.0, ..Default::default() }.validate().is_err());
        assert!(GenerationParams { repeat_penalty: 0.5, ..Default::default() }.validate().is_err());
    }
}
