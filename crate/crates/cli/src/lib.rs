//! The `danube` command-line tool: interactive chat, one-shot generation,
//! quantization, file inspection, perplexity evaluation, benchmarking and
//! the HTTP server, all behind one binary.

pub mod bench;
mod chat;
mod error;
mod generate;
pub mod inspect;
mod perplexity;
mod quantize;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use danube_core::GenerationParams;
use danube_server::LoadedModel;

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "danube", version, about = "Run, quantize and evaluate Danube3 GGUF models on the CPU")]
pub struct Cli {
    /// Worker threads for tensor kernels (default: one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Interactive multi-turn chat on stdin/stdout.
    Chat(chat::ChatArgs),
    /// Generate a single completion for a prompt.
    Generate(generate::GenerateArgs),
    /// Re-encode a GGUF file's weights to another type.
    Quantize(quantize::QuantizeArgs),
    /// Measure perplexity on a text file.
    Perplexity(perplexity::PerplexityArgs),
    /// Print a GGUF file's metadata, tensors and model config.
    Inspect(inspect::InspectArgs),
    /// Serve the chat-completions HTTP API.
    Serve(danube_server::ServeArgs),
    /// Measure prompt and generation throughput.
    Bench(bench::BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// GGUF checkpoint.
    #[arg(long, short)]
    pub model: PathBuf,
    /// Context length in tokens (default: the model's, capped at 4096).
    #[arg(long)]
    pub ctx: Option<usize>,
    /// Chat template when the file has none: `danube` or Jinja source.
    #[arg(long)]
    pub chat_template: Option<String>,
}

impl ModelArgs {
    pub fn load(&self) -> Result<(LoadedModel, usize)> {
        let m = LoadedModel::load(&self.model, self.chat_template.as_deref())?;
        let max = m.model.config().max_context;
        let ctx = self.ctx.unwrap_or(max.min(4096));
        if ctx == 0 || ctx > max {
            return Err(CliError::Usage(format!("--ctx must be in 1..={max} for this model, got {ctx}")));
        }
        Ok((m, ctx))
    }
}

#[derive(Debug, Clone, Args)]
pub struct SamplingArgs {
    /// 0 gives greedy decoding.
    #[arg(long, default_value_t = 0.7)]
    pub temperature: f32,
    /// 0 disables top-k.
    #[arg(long, default_value_t = 40)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0.95)]
    pub top_p: f32,
    #[arg(long, default_value_t = 1.1)]
    pub repeat_penalty: f32,
    #[arg(long, default_value_t = 64)]
    pub repeat_window: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum new tokens per reply.
    #[arg(long, default_value_t = 256)]
    pub max_tokens: usize,
    /// Stop sequence; may be repeated.
    #[arg(long)]
    pub stop: Vec<String>,
}

impl SamplingArgs {
    /// Validated parameters. Runs before any model is loaded.
    pub fn params(&self) -> Result<GenerationParams> {
        let p = GenerationParams {
            temperature: self.temperature,
            top_k: self.top_k,
            top_p: self.top_p,
            repeat_penalty: self.repeat_penalty,
            repeat_window: self.repeat_window,
            max_new_tokens: self.max_tokens,
            seed: self.seed,
            stop_sequences: self.stop.clone(),
        };
        p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(p)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot set up thread pool: {e}")))?;
    }
    match cli.command {
        Command::Chat(a) => chat::run(&a),
        Command::Generate(a) => generate::run(&a),
        Command::Quantize(a) => quantize::run(&a),
        Command::Perplexity(a) => perplexity::run(&a),
        Command::Inspect(a) => inspect::run(&a),
        Command::Serve(a) => Ok(danube_server::run(&a)?),
        Command::Bench(a) => bench::run(&a),
    }
}
