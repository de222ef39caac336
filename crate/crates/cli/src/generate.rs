use std::io::{Read, Write};
use std::time::Instant;

use clap::Args;
use danube_core::{generate, Role, Turn};

use crate::{ModelArgs, Result, SamplingArgs};

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    /// Prompt text; read from stdin when omitted.
    #[arg(long, short)]
    pub prompt: Option<String>,
    /// Use the prompt as raw text instead of wrapping it in a chat turn.
    #[arg(long)]
    pub raw: bool,
}

pub fn run(args: &GenerateArgs) -> Result<()> {
    let params = args.sampling.params()?;
    let prompt = match &args.prompt {
        Some(p) => p.clone(),
        None => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let (m, ctx) = args.model.load()?;
    let ids = if args.raw {
        m.tokenizer.encode(&prompt, m.tokenizer.add_bos())
    } else {
        m.template.render(&[Turn::new(Role::User, prompt)], &m.tokenizer)?
    };
    let mut cache = m.model.new_cache(ctx)?;
    let mut out = std::io::stdout().lock();
    let start = Instant::now();
    // a closed stdout cancels generation
    let g = generate(&m.model, &m.tokenizer, &mut cache, &ids, &params, |t| {
        out.write_all(t.as_bytes()).and_then(|_| out.flush()).is_ok()
    })?;
    writeln!(out)?;
    let secs = start.elapsed().as_secs_f64();
    eprintln!(
        "[{} prompt tokens, {} generated, finish: {}, {:.1} tok/s]",
        g.prompt_tokens,
        g.tokens.len(),
        g.finish,
        g.tokens.len() as f64 / secs.max(1e-9)
    );
    Ok(())
}
