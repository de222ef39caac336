//! SentencePiece-style BPE tokenizer with byte fallback.
//!
//! Encoding seeds one symbol per character and repeatedly merges the
//! adjacent pair whose concatenation is the highest-scoring vocabulary
//! entry (leftmost pair on ties). Characters with no entry fall back to
//! `<0xHH>` byte tokens.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::error::{Error, Result};
use crate::gguf::{GgufFile, MetadataValue};

/// Word-boundary marker substituted for spaces.
pub const SPACE_MARKER: char = '\u{2581}';

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenType {
    Normal,
    Unknown,
    Control,
    UserDefined,
    Unused,
    Byte,
}

impl TokenType {
    pub fn from_gguf(v: i64) -> Self {
        match v {
            2 => Self::Unknown,
            3 => Self::Control,
            4 => Self::UserDefined,
            5 => Self::Unused,
            6 => Self::Byte,
            _ => Self::Normal,
        }
    }

    pub fn to_gguf(self) -> i32 {
        match self {
            Self::Normal => 1,
            Self::Unknown => 2,
            Self::Control => 3,
            Self::UserDefined => 4,
            Self::Unused => 5,
            Self::Byte => 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    tokens: Vec<String>,
    scores: Vec<f32>,
    types: Vec<TokenType>,
    bos_id: u32,
    eos_id: u32,
    add_bos: bool,
    add_space_prefix: bool,
    /// Pieces usable by plain-text encoding (normal and user-defined).
    pieces: HashMap<String, u32>,
    /// Control tokens by text, longest first, for special-token parsing.
    specials: Vec<(String, u32)>,
    byte_ids: [u32; 256],
}

fn parse_byte_token(s: &str) -> Option<u8> {
    let hex = s.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

impl Tokenizer {
    pub fn new(
        tokens: Vec<String>,
        scores: Vec<f32>,
        types: Vec<TokenType>,
        bos_id: u32,
        eos_id: u32,
    ) -> Result<Self> {
        let n = tokens.len();
        if scores.len() != n || types.len() != n {
            return Err(Error::Validation(format!(
                "vocabulary arrays disagree: {n} tokens, {} scores, {} types",
                scores.len(),
                types.len()
            )));
        }
        if bos_id as usize >= n || eos_id as usize >= n {
            return Err(Error::Validation(format!("bos/eos ids ({bos_id}, {eos_id}) outside vocabulary of {n}")));
        }
        let mut pieces = HashMap::new();
        let mut specials = Vec::new();
        let mut byte_ids = [u32::MAX; 256];
        let mut n_bytes = 0;
        for (id, (tok, ty)) in tokens.iter().zip(&types).enumerate() {
            let id = id as u32;
            match ty {
                TokenType::Byte => {
                    let b = parse_byte_token(tok).ok_or_else(|| {
                        Error::Validation(format!("byte token {id} has malformed text {tok:?}"))
                    })?;
                    if byte_ids[b as usize] != u32::MAX {
                        return Err(Error::Validation(format!("byte <0x{b:02X}> appears twice")));
                    }
                    byte_ids[b as usize] = id;
                    n_bytes += 1;
                }
                TokenType::Normal | TokenType::UserDefined => {
                    pieces.entry(tok.clone()).or_insert(id);
                }
                TokenType::Control => {
                    if !tok.is_empty() {
                        specials.push((tok.clone(), id));
                    }
                }
                TokenType::Unknown | TokenType::Unused => {}
            }
        }
        if n_bytes != 256 {
            return Err(Error::Validation(format!(
                "vocabulary has {n_bytes} byte tokens; byte fallback needs all 256"
            )));
        }
        specials.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        Ok(Self {
            tokens,
            scores,
            types,
            bos_id,
            eos_id,
            add_bos: true,
            add_space_prefix: true,
            pieces,
            specials,
            byte_ids,
        })
    }

    /// Reads the `tokenizer.ggml.*` metadata arrays.
    pub fn from_gguf(g: &GgufFile) -> Result<Self> {
        let model = g
            .get("tokenizer.ggml.model")
            .and_then(MetadataValue::as_str)
            .ok_or_else(|| Error::Schema("missing tokenizer.ggml.model".into()))?;
        if model != "llama" {
            return Err(Error::Unsupported(format!(
                "tokenizer model {model:?}; only SentencePiece (\"llama\") vocabularies are supported"
            )));
        }
        let array = |key: &str| {
            g.get(key)
                .and_then(MetadataValue::as_array)
                .ok_or_else(|| Error::Schema(format!("missing array {key}")))
        };
        let tokens = array("tokenizer.ggml.tokens")?
            .values
            .iter()
            .map(|v| v.as_str().map(str::to_owned))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Schema("tokenizer.ggml.tokens must hold strings".into()))?;
        let scores = match g.get("tokenizer.ggml.scores") {
            Some(_) => array("tokenizer.ggml.scores")?
                .values
                .iter()
                .map(|v| v.as_f64().map(|f| f as f32))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Schema("tokenizer.ggml.scores must be numeric".into()))?,
            None => vec![0.0; tokens.len()],
        };
        let types = array("tokenizer.ggml.token_type")?
            .values
            .iter()
            .map(|v| v.as_i64().map(TokenType::from_gguf))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Schema("tokenizer.ggml.token_type must be integers".into()))?;
        let id = |key: &str| {
            g.get(key)
                .and_then(MetadataValue::as_u64)
                .map(|v| v as u32)
                .ok_or_else(|| Error::Schema(format!("missing {key}")))
        };
        let mut tok = Self::new(tokens, scores, types, id("tokenizer.ggml.bos_token_id")?, id("tokenizer.ggml.eos_token_id")?)?;
        if let Some(b) = g.get("tokenizer.ggml.add_bos_token").and_then(MetadataValue::as_bool) {
            tok.add_bos = b;
        }
        if let Some(b) = g.get("tokenizer.ggml.add_space_prefix").and_then(MetadataValue::as_bool) {
            tok.add_space_prefix = b;
        }
        Ok(tok)
    }

    /// Metadata entries describing this vocabulary.
    pub fn to_metadata(&self) -> Vec<(String, MetadataValue)> {
        vec![
            ("tokenizer.ggml.model".into(), MetadataValue::String("llama".into())),
            ("tokenizer.ggml.tokens".into(), MetadataValue::string_array(self.tokens.iter().cloned())),
            ("tokenizer.ggml.scores".into(), MetadataValue::f32_array(self.scores.iter().copied())),
            (
                "tokenizer.ggml.token_type".into(),
                MetadataValue::i32_array(self.types.iter().map(|t| t.to_gguf())),
            ),
            ("tokenizer.ggml.bos_token_id".into(), MetadataValue::U32(self.bos_id)),
            ("tokenizer.ggml.eos_token_id".into(), MetadataValue::U32(self.eos_id)),
            ("tokenizer.ggml.add_bos_token".into(), MetadataValue::Bool(self.add_bos)),
            ("tokenizer.ggml.add_space_prefix".into(), MetadataValue::Bool(self.add_space_prefix)),
        ]
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn bos_id(&self) -> u32 {
        self.bos_id
    }

    pub fn eos_id(&self) -> u32 {
        self.eos_id
    }

    pub fn add_bos(&self) -> bool {
        self.add_bos
    }

    /// Whether raw text at the start of a prompt gets a leading `▁`.
    pub fn add_space_prefix(&self) -> bool {
        self.add_space_prefix
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn token_type(&self, id: u32) -> Option<TokenType> {
        self.types.get(id as usize).copied()
    }

    /// Id of a control token by its text, e.g. `"</s>"`.
    pub fn special_id(&self, text: &str) -> Option<u32> {
        self.specials.iter().find(|(t, _)| t == text).map(|&(_, id)| id)
    }

    /// Encodes plain text. Control tokens are never produced.
    pub fn encode(&self, text: &str, add_bos: bool) -> Vec<u32> {
        let mut out = Vec::new();
        if add_bos {
            out.push(self.bos_id);
        }
        self.encode_fragment(text, self.add_space_prefix, &mut out);
        out
    }

    /// Like [`encode`](Self::encode) for raw bytes, which must be UTF-8.
    pub fn encode_bytes(&self, text: &[u8], add_bos: bool) -> Result<Vec<u32>> {
        let s = std::str::from_utf8(text)
            .map_err(|e| Error::Input(format!("input is not valid UTF-8: {e}")))?;
        Ok(self.encode(s, add_bos))
    }

    /// Encodes template text, mapping control-token strings (such as
    /// `</s>`) to their ids. Raw fragments at the start or after a control
    /// token receive the prefix space.
    pub fn encode_with_specials(&self, text: &str, prev_special: bool, out: &mut Vec<u32>) -> bool {
        let mut prev_special = prev_special;
        let mut rest = text;
        while !rest.is_empty() {
            let hit = self
                .specials
                .iter()
                .filter_map(|(s, id)| rest.find(s.as_str()).map(|at| (at, s.len(), *id)))
                .min_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
            match hit {
                Some((at, len, id)) => {
                    if at > 0 {
                        self.encode_fragment(&rest[..at], prev_special && self.add_space_prefix, out);
                    }
                    out.push(id);
                    prev_special = true;
                    rest = &rest[at + len..];
                }
                None => {
                    self.encode_fragment(rest, prev_special && self.add_space_prefix, out);
                    prev_special = false;
                    break;
                }
            }
        }
        prev_special
    }

    /// BPE-encodes a raw text fragment into `out`.
    pub fn encode_fragment(&self, text: &str, prefix_space: bool, out: &mut Vec<u32>) {
        if text.is_empty() {
            return;
        }
        let mut norm = String::with_capacity(text.len() + 3);
        if prefix_space {
            norm.push(SPACE_MARKER);
        }
        for c in text.chars() {
            norm.push(if c == ' ' { SPACE_MARKER } else { c });
        }

        let mut symbols: Vec<Symbol> = norm
            .char_indices()
            .enumerate()
            .map(|(i, (start, c))| Symbol {
                start,
                len: c.len_utf8(),
                prev: i.checked_sub(1),
                next: Some(i + 1),
            })
            .collect();
        if let Some(last) = symbols.last_mut() {
            last.next = None;
        }

        let mut queue = BinaryHeap::new();
        for i in 1..symbols.len() {
            self.push_bigram(&norm, &symbols, i - 1, i, &mut queue);
        }
        while let Some(bigram) = queue.pop() {
            let (l, r) = (bigram.left, bigram.right);
            let (left, right) = (symbols[l], symbols[r]);
            // stale entry: one side was merged away since it was queued
            if left.len == 0 || right.len == 0 || left.len + right.len != bigram.size {
                continue;
            }
            symbols[l].len += right.len;
            symbols[r].len = 0;
            symbols[l].next = right.next;
            if let Some(n) = right.next {
                symbols[n].prev = Some(l);
            }
            if let Some(p) = symbols[l].prev {
                self.push_bigram(&norm, &symbols, p, l, &mut queue);
            }
            if let Some(n) = symbols[l].next {
                self.push_bigram(&norm, &symbols, l, n, &mut queue);
            }
        }

        let mut i = if symbols.is_empty() { None } else { Some(0) };
        while let Some(idx) = i {
            let s = symbols[idx];
            let piece = &norm[s.start..s.start + s.len];
            match self.pieces.get(piece) {
                Some(&id) => out.push(id),
                None => out.extend(piece.bytes().map(|b| self.byte_ids[b as usize])),
            }
            i = s.next;
        }
    }

    fn push_bigram(&self, text: &str, symbols: &[Symbol], l: usize, r: usize, queue: &mut BinaryHeap<Bigram>) {
        let start = symbols[l].start;
        let size = symbols[l].len + symbols[r].len;
        if let Some(&id) = self.pieces.get(&text[start..start + size]) {
            queue.push(Bigram { score: self.scores[id as usize], left: l, right: r, size });
        }
    }

    /// Bytes contributed by a token (empty for control tokens unless
    /// `render_special`).
    fn token_bytes(&self, id: u32, render_special: bool) -> Result<Vec<u8>> {
        let idx = id as usize;
        let ty = *self
            .types
            .get(idx)
            .ok_or_else(|| Error::Input(format!("token id {id} is outside the vocabulary of {}", self.tokens.len())))?;
        let tok = &self.tokens[idx];
        Ok(match ty {
            TokenType::Byte => vec![parse_byte_token(tok).unwrap()],
            TokenType::Normal | TokenType::UserDefined => tok.replace(SPACE_MARKER, " ").into_bytes(),
            TokenType::Control | TokenType::Unknown | TokenType::Unused => {
                if render_special {
                    tok.clone().into_bytes()
                } else {
                    Vec::new()
                }
            }
        })
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        self.decode_with(ids, false)
    }

    /// Decodes a whole sequence. Invalid UTF-8 from byte tokens becomes
    /// U+FFFD.
    pub fn decode_with(&self, ids: &[u32], render_special: bool) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            bytes.extend(self.token_bytes(id, render_special)?);
        }
        let body = if self.add_space_prefix && bytes.first() == Some(&b' ') {
            &bytes[1..]
        } else {
            &bytes[..]
        };
        Ok(String::from_utf8_lossy(body).into_owned())
    }

    /// Text of a single token as it would appear mid-sequence.
    pub fn piece(&self, id: u32) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.token_bytes(id, true)?).into_owned())
    }

    pub fn stream_decoder(&self) -> StreamDecoder<'_> {
        StreamDecoder { tok: self, pending: Vec::new(), at_start: true, render_special: false }
    }
}

#[derive(Debug, Clone, Copy)]
struct Symbol {
    start: usize,
    len: usize,
    prev: Option<usize>,
    next: Option<usize>,
}

#[derive(Debug)]
struct Bigram {
    score: f32,
    left: usize,
    right: usize,
    size: usize,
}

impl PartialEq for Bigram {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Bigram {}

impl PartialOrd for Bigram {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bigram {
    /// Higher score first, then the leftmost pair.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.left.cmp(&self.left))
    }
}

/// Incremental decoder that holds back incomplete UTF-8 sequences.
#[derive(Debug)]
pub struct StreamDecoder<'a> {
    tok: &'a Tokenizer,
    pending: Vec<u8>,
    at_start: bool,
    render_special: bool,
}

impl StreamDecoder<'_> {
    pub fn render_special(mut self, yes: bool) -> Self {
        self.render_special = yes;
        self
    }

    /// Feeds one token and returns the text that is now complete.
    pub fn push(&mut self, id: u32) -> Result<String> {
        let mut bytes = self.tok.token_bytes(id, self.render_special)?;
        if self.at_start && !bytes.is_empty() {
            self.at_start = false;
            if self.tok.add_space_prefix && bytes[0] == b' ' {
                bytes.remove(0);
            }
        }
        self.pending.extend(bytes);
        let mut out = String::new();
        loop {
            match std::str::from_utf8(&self.pending) {
                Ok(s) => {
                    out.push_str(s);
                    self.pending.clear();
                    break;
                }
                Err(e) => {
                    let valid = e.valid_up_to();
                    out.push_str(std::str::from_utf8(&self.pending[..valid]).unwrap());
                    match e.error_len() {
                        Some(bad) => {
                            out.push('\u{FFFD}');
                            self.pending.drain(..valid + bad);
                        }
                        None => {
                            self.pending.drain(..valid);
                            break;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Flushes any held-back bytes.
    pub fn finish(&mut self) -> String {
        let s = String::from_utf8_lossy(&self.pending).into_owned();
        self.pending.clear();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn empty_input() {
        let tok = fixtures::tokenizer();
        assert!(tok.encode("", false).is_empty());
        assert_eq!(tok.encode("", true), vec![tok.bos_id()]);
        assert_eq!(tok.decode(&[]).unwrap(), "");
    }

    #[test]
    fn merges_whole_words() {
        let tok = fixtures::tokenizer();
        let ids = tok.encode("Hello world", false);
        let pieces: Vec<_> = ids.iter().map(|&i| tok.token(i).unwrap()).collect();
        assert_eq!(pieces, vec!["▁Hello", "▁world"]);
    }

    #[test]
    fn emoji_falls_back_to_bytes() {
        let tok = fixtures::tokenizer();
        let s = "🦀🎉";
        let ids = tok.encode(s, false);
        let types: Vec<_> = ids.iter().map(|&i| tok.token_type(i).unwrap()).collect();
        // prefix marker then 8 byte tokens
        assert_eq!(types.iter().filter(|&&t| t == TokenType::Byte).count(), 8);
        assert_eq!(tok.decode(&ids).unwrap(), s);
    }

    #[test]
    fn control_text_is_not_special_in_plain_encode() {
        let tok = fixtures::tokenizer();
        let ids = tok.encode("</s>", false);
        assert!(!ids.contains(&tok.eos_id()));
        assert_eq!(tok.decode(&ids).unwrap(), "</s>");

        let mut out = Vec::new();
        tok.encode_with_specials("hi</s>", true, &mut out);
        assert_eq!(*out.last().unwrap(), tok.eos_id());
    }

    #[test]
    fn out_of_range_id() {
        let tok = fixtures::tokenizer();
        let n = tok.vocab_size() as u32;
        assert!(matches!(tok.decode(&[n]), Err(Error::Input(_))));
    }

    #[test]
    fn invalid_byte_sequence_gets_replacement() {
        let tok = fixtures::tokenizer();
        let lone = tok.byte_ids[0xE2];
        let a = tok.encode("a", false);
        let ids = [a.clone(), vec![lone], tok.encode_fragment_vec("b")].concat();
        assert_eq!(tok.decode(&ids).unwrap(), "a\u{FFFD}b");
    }

    #[test]
    fn invalid_utf8_bytes_rejected() {
        let tok = fixtures::tokenizer();
        assert!(matches!(tok.encode_bytes(&[0xff, 0xfe], false), Err(Error::Input(_))));
    }

    #[test]
    fn missing_byte_tokens_rejected() {
        let toks = vec!["<unk>".to_string(), "<s>".into(), "</s>".into(), "a".into()];
        let types = vec![TokenType::Unknown, TokenType::Control, TokenType::Control, TokenType::Normal];
        assert!(Tokenizer::new(toks, vec![0.0; 4], types, 1, 2).is_err());
    }

    #[test]
    fn bigram_ordering_prefers_leftmost_on_ties() {
        let a = Bigram { score: 1.0, left: 0, right: 1, size: 2 };
        let b = Bigram { score: 1.0, left: 3, right: 4, size: 2 };
        assert!(a > b);
        let c = Bigram { score: 2.0, left: 5, right: 6, size: 2 };
        assert!(c > a);
    }

    impl Tokenizer {
        fn encode_fragment_vec(&self, s: &str) -> Vec<u32> {
            let mut v = Vec::new();
            self.encode_fragment(s, false, &mut v);
            v
        }
    }
}
