//! Chat prompt templating.
//!
//! Templates are Jinja sources, normally the `tokenizer.chat_template`
//! stored in the checkpoint. Message contents are rendered as opaque
//! placeholders and tokenized separately from the template text, so user
//! text can never produce control tokens and each turn tokenizes the same
//! way regardless of what follows it.

use std::fmt;
use std::str::FromStr;

use minijinja::{context, Environment, ErrorKind};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gguf::{GgufFile, MetadataValue};
use crate::tokenizer::Tokenizer;

/// The chat format published with the Danube3 chat checkpoints.
pub const DANUBE_CHAT_TEMPLATE: &str = "{% for message in messages %}{% if message['role'] == 'user' %}{{ '<|prompt|>' + message['content'] + eos_token }}{% elif message['role'] == 'system' %}{{ '<|system|>' + message['content'] + eos_token }}{% elif message['role'] == 'assistant' %}{{ '<|answer|>' + message['content'] + eos_token }}{% endif %}{% if loop.last and add_generation_prompt %}{{ '<|answer|>' }}{% endif %}{% endfor %}";

const OPEN: char = '\u{E000}';
const CLOSE: char = '\u{E001}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "system" => Ok(Role::System),
            "user" => Ok(Role::User),
            "assistant" => Ok(Role::Assistant),
            other => Err(Error::Input(format!("unknown role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
}

impl Turn {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateSource {
    Checkpoint,
    UserConfig,
}

#[derive(Debug, Clone)]
pub struct ChatTemplate {
    pub source: TemplateSource,
    pub source_text: String,
    /// Prepend BOS to rendered prompts.
    pub add_bos: bool,
}

impl ChatTemplate {
    pub fn new(source: TemplateSource, source_text: impl Into<String>) -> Result<Self> {
        let t = Self { source, source_text: source_text.into(), add_bos: true };
        t.environment()?;
        Ok(t)
    }

    /// The checkpoint's `tokenizer.chat_template`, if present.
    pub fn from_gguf(g: &GgufFile) -> Result<Option<Self>> {
        let Some(src) = g.get("tokenizer.chat_template").and_then(MetadataValue::as_str) else {
            return Ok(None);
        };
        let mut t = Self::new(TemplateSource::Checkpoint, src)?;
        if let Some(b) = g.get("tokenizer.ggml.add_bos_token").and_then(MetadataValue::as_bool) {
            t.add_bos = b;
        }
        Ok(Some(t))
    }

    /// A user-supplied template: `danube` names the built-in Danube3
    /// format, anything else is Jinja source.
    pub fn user(name_or_source: &str) -> Result<Self> {
        let src = if name_or_source == "danube" { DANUBE_CHAT_TEMPLATE } else { name_or_source };
        Self::new(TemplateSource::UserConfig, src)
    }

    fn environment(&self) -> Result<Environment<'static>> {
        let mut env = Environment::new();
        env.add_function("raise_exception", |msg: String| -> std::result::Result<String, minijinja::Error> {
            Err(minijinja::Error::new(ErrorKind::InvalidOperation, msg))
        });
        env.add_template_owned("chat", self.source_text.clone())
            .map_err(|e| Error::Template(e.to_string()))?;
        Ok(env)
    }

    fn render_raw(&self, turns: &[(Role, String)], tok: &Tokenizer) -> Result<String> {
        let env = self.environment()?;
        let messages: Vec<_> = turns
            .iter()
            .map(|(role, content)| context! { role => role.as_str(), content => content })
            .collect();
        let add_generation_prompt = turns.last().is_some_and(|(r, _)| *r != Role::Assistant);
        let bos = tok.token(tok.bos_id()).unwrap_or_default();
        let eos = tok.token(tok.eos_id()).unwrap_or_default();
        env.get_template("chat")
            .and_then(|t| {
                t.render(context! {
                    messages => messages,
                    add_generation_prompt => add_generation_prompt,
                    bos_token => bos,
                    eos_token => eos,
                })
            })
            .map_err(|e| Error::Template(e.to_string()))
    }

    /// Renders the conversation to text exactly as the template engine
    /// produces it. A generation prompt is appended unless the last turn is
    /// the assistant's.
    pub fn render_text(&self, turns: &[Turn], tok: &Tokenizer) -> Result<String> {
        let raw: Vec<_> = turns.iter().map(|t| (t.role, t.content.clone())).collect();
        self.render_raw(&raw, tok)
    }

    /// Renders and tokenizes a conversation.
    pub fn render(&self, turns: &[Turn], tok: &Tokenizer) -> Result<Vec<u32>> {
        if let Some(t) = turns.iter().find(|t| t.content.contains(OPEN) || t.content.contains(CLOSE)) {
            // placeholders use private-use characters; keep them unambiguous
            return Err(Error::Input(format!(
                "{} message contains reserved characters U+E000/U+E001",
                t.role
            )));
        }
        let placeholders: Vec<_> = turns
            .iter()
            .enumerate()
            .map(|(i, t)| (t.role, format!("{OPEN}{i}{CLOSE}")))
            .collect();
        let text = self.render_raw(&placeholders, tok)?;

        let mut ids = Vec::new();
        if self.add_bos {
            ids.push(tok.bos_id());
        }
        let mut prev_special = true;
        let mut rest = text.as_str();
        let mut seen = vec![false; turns.len()];
        while let Some(at) = rest.find(OPEN) {
            prev_special = tok.encode_with_specials(&rest[..at], prev_special, &mut ids);
            let tail = &rest[at + OPEN.len_utf8()..];
            let end = tail
                .find(CLOSE)
                .ok_or_else(|| Error::Template("template altered message content".into()))?;
            let idx: usize = tail[..end]
                .parse()
                .ok()
                .filter(|&i| i < turns.len())
                .ok_or_else(|| Error::Template("template altered message content".into()))?;
            seen[idx] = true;
            let content = &turns[idx].content;
            if !content.is_empty() {
                tok.encode_fragment(content, prev_special && tok.add_space_prefix(), &mut ids);
                prev_special = false;
            }
            rest = &tail[end + CLOSE.len_utf8()..];
        }
        tok.encode_with_specials(rest, prev_special, &mut ids);
        Ok(ids)
    }
}

/// Picks the checkpoint template when present, else the user's.
pub fn resolve_template(checkpoint: Option<ChatTemplate>, user: Option<ChatTemplate>) -> Result<ChatTemplate> {
    checkpoint.or(user).ok_or_else(|| {
        Error::Config("no chat template: the model has none and none was configured (try --chat-template danube)".into())
    })
}

/// Renders `turns` with `template`.
pub fn render_chat(turns: &[Turn], template: &ChatTemplate, tok: &Tokenizer) -> Result<Vec<u32>> {
    template.render(turns, tok)
}
