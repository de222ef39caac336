//! Autoregressive decoding: sampling, stop handling and chat sessions.

mod sampling;
mod template;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{KvCache, Model};
use crate::tokenizer::Tokenizer;

pub use sampling::{sample_next, GenerationParams};
pub use template::{
    render_chat, resolve_template, ChatTemplate, Role, TemplateSource, Turn, DANUBE_CHAT_TEMPLATE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Eos,
    StopSequence,
    Length,
    /// The context window filled up.
    Capacity,
    /// The caller asked to stop.
    Cancelled,
}

impl fmt::Display for FinishReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FinishReason::Eos => "eos",
            FinishReason::StopSequence => "stop_sequence",
            FinishReason::Length => "length",
            FinishReason::Capacity => "capacity",
            FinishReason::Cancelled => "cancelled",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Sampled ids, excluding a terminating EOS.
    pub tokens: Vec<u32>,
    /// Decoded output, cut before any stop sequence.
    pub text: String,
    pub finish: FinishReason,
    pub prompt_tokens: usize,
}

/// Holds back text that might be the start of a stop sequence.
struct StopFilter<'a> {
    stops: &'a [String],
    text: String,
    sent: usize,
}

impl<'a> StopFilter<'a> {
    fn new(stops: &'a [String]) -> Self {
        Self { stops, text: String::new(), sent: 0 }
    }

    /// Appends `delta`; returns the text safe to emit and whether a stop
    /// sequence was hit.
    fn push(&mut self, delta: &str) -> (String, bool) {
        self.text.push_str(delta);
        let tail = &self.text[self.sent..];
        let hit = self.stops.iter().filter(|s| !s.is_empty()).filter_map(|s| tail.find(s.as_str())).min();
        if let Some(at) = hit {
            let end = self.sent + at;
            let out = self.text[self.sent..end].to_string();
            self.text.truncate(end);
            self.sent = end;
            return (out, true);
        }
        let hold = tail
            .char_indices()
            .map(|(i, _)| &tail[i..])
            .find(|suffix| self.stops.iter().any(|s| s.starts_with(suffix)))
            .map_or(0, str::len);
        let end = self.text.len() - hold;
        let out = self.text[self.sent..end].to_string();
        self.sent = end;
        (out, false)
    }

    fn flush(&mut self) -> String {
        let out = self.text[self.sent..].to_string();
        self.sent = self.text.len();
        out
    }
}

/// Runs the prompt through the model and samples until EOS, a stop
/// sequence, `max_new_tokens`, or a full cache.
///
/// The cache must be empty or hold a prefix of `prompt`; tokens already
/// cached are not recomputed. `on_text` is called once per sampled token
/// with the text completed by it (possibly empty); the pieces concatenate
/// to `Generation::text`. Returning `false` cancels generation.
pub fn generate(
    model: &Model,
    tok: &Tokenizer,
    cache: &mut KvCache,
    prompt: &[u32],
    params: &GenerationParams,
    mut on_text: impl FnMut(&str) -> bool,
) -> Result<Generation> {
    params.validate()?;
    if prompt.is_empty() {
        return Err(Error::Input("prompt is empty".into()));
    }
    if prompt.len() > cache.capacity() {
        return Err(Error::Capacity { needed: prompt.len(), capacity: cache.capacity() });
    }
    if cache.len() >= prompt.len() {
        // at least one token must be run to get logits
        cache.truncate(prompt.len() - 1);
    }
    let mut logits = model.forward_last(&prompt[cache.len()..], cache)?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut history = prompt.to_vec();
    let mut tokens = Vec::new();
    let mut decoder = tok.stream_decoder();
    let mut stops = StopFilter::new(&params.stop_sequences);
    let mut finish = FinishReason::Length;
    let mut cancelled = false;

    while tokens.len() < params.max_new_tokens {
        let id = sample_next(&logits, params, &history, &mut rng)?;
        if id == tok.eos_id() {
            finish = FinishReason::Eos;
            break;
        }
        tokens.push(id);
        history.push(id);
        let (out, hit) = stops.push(&decoder.push(id)?);
        if !on_text(&out) {
            cancelled = true;
        }
        if hit {
            finish = FinishReason::StopSequence;
            break;
        }
        if cancelled {
            finish = FinishReason::Cancelled;
            break;
        }
        if tokens.len() == params.max_new_tokens {
            break;
        }
        if cache.remaining() == 0 {
            finish = FinishReason::Capacity;
            break;
        }
        logits = model.forward_last(&[id], cache)?;
    }

    if finish != FinishReason::StopSequence && finish != FinishReason::Cancelled {
        let (out, hit) = stops.push(&decoder.finish());
        let mut rest = out;
        if hit {
            finish = FinishReason::StopSequence;
        } else {
            rest.push_str(&stops.flush());
        }
        if !rest.is_empty() {
            on_text(&rest);
        }
    }
    Ok(Generation { tokens, text: stops.text, finish, prompt_tokens: prompt.len() })
}

/// A multi-turn conversation that keeps its KV cache between turns.
pub struct Session<'m> {
    model: &'m Model,
    tok: &'m Tokenizer,
    template: ChatTemplate,
    cache: KvCache,
    cached: Vec<u32>,
    pub turns: Vec<Turn>,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Model, tok: &'m Tokenizer, template: ChatTemplate, context: usize) -> Result<Self> {
        Ok(Self { model, tok, template, cache: model.new_cache(context)?, cached: Vec::new(), turns: Vec::new() })
    }

    pub fn cached_tokens(&self) -> usize {
        self.cache.len()
    }

    /// Adds a user turn, generates the reply and appends it as an
    /// assistant turn.
    pub fn reply(
        &mut self,
        user: &str,
        params: &GenerationParams,
        on_text: impl FnMut(&str) -> bool,
    ) -> Result<Generation> {
        self.turns.push(Turn::new(Role::User, user));
        let prompt = match self.template.render(&self.turns, self.tok) {
            Ok(p) => p,
            Err(e) => {
                self.turns.pop();
                return Err(e);
            }
        };
        let common = self.cached.iter().zip(&prompt).take_while(|(a, b)| a == b).count();
        self.cache.truncate(common.min(self.cache.len()));
        let out = match generate(self.model, self.tok, &mut self.cache, &prompt, params, on_text) {
            Ok(g) => g,
            Err(e) => {
                self.turns.pop();
                self.cache.clear();
                self.cached.clear();
                return Err(e);
            }
        };
        self.cached = prompt;
        self.cached.extend(&out.tokens);
        self.cached.truncate(self.cache.len());
        self.turns.push(Turn::new(Role::Assistant, out.text.clone()));
        Ok(out)
    }

    pub fn reset(&mut self) {
        self.turns.clear();
        self.cache.clear();
        self.cached.clear();
    }
}
