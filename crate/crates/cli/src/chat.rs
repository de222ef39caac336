use std::io::{BufRead, IsTerminal, Write};

use clap::Args;
use danube_core::{Error, FinishReason, GenerationParams, Session};

use crate::{ModelArgs, Result, SamplingArgs};

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

const HELP: &str = "commands: /reset clears the conversation, /params shows sampling settings, /quit exits";

fn full_hint(err: &mut impl Write, needed: Option<usize>, capacity: usize) -> std::io::Result<()> {
    match needed {
        Some(n) => writeln!(err, "context is full ({n} tokens needed, {capacity} available); type /reset to start over"),
        None => writeln!(err, "context is full ({capacity} tokens); type /reset to start over"),
    }
}

fn describe(p: &GenerationParams) -> String {
    format!(
        "temperature {} top_k {} top_p {} repeat_penalty {} repeat_window {} max_tokens {} seed {}",
        p.temperature, p.top_k, p.top_p, p.repeat_penalty, p.repeat_window, p.max_new_tokens, p.seed
    )
}

/// Line-based chat loop. Returns at end of input or on `/quit`.
pub fn repl(
    session: &mut Session<'_>,
    params: &GenerationParams,
    context: usize,
    input: impl BufRead,
    out: &mut impl Write,
    err: &mut impl Write,
    interactive: bool,
) -> Result<()> {
    let prompt = |err: &mut dyn Write| -> std::io::Result<()> {
        if interactive {
            write!(err, "> ")?;
            err.flush()?;
        }
        Ok(())
    };
    if interactive {
        writeln!(err, "{HELP}; Ctrl-D to exit")?;
    }
    prompt(err)?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        match line.trim() {
            "" => {}
            "/quit" | "/exit" => break,
            "/reset" => {
                session.reset();
                writeln!(err, "conversation cleared")?;
            }
            "/params" => writeln!(out, "{}", describe(params))?,
            "/help" => writeln!(out, "{HELP}")?,
            cmd if cmd.starts_with('/') => writeln!(err, "unknown command {cmd}; {HELP}")?,
            _ => {
                let res = session.reply(line, params, |t| {
                    let _ = out.write_all(t.as_bytes()).and_then(|_| out.flush());
                    true
                });
                match res {
                    Ok(g) => {
                        writeln!(out)?;
                        if g.finish == FinishReason::Capacity {
                            full_hint(err, None, context)?;
                        }
                    }
                    Err(Error::Capacity { needed, capacity }) => full_hint(err, Some(needed), capacity)?,
                    Err(e) => return Err(e.into()),
                }
            }
        }
        prompt(err)?;
    }
    if interactive {
        writeln!(err)?;
    }
    Ok(())
}

pub fn run(args: &ChatArgs) -> Result<()> {
    let params = args.sampling.params()?;
    let (m, ctx) = args.model.load()?;
    let mut session = Session::new(&m.model, &m.tokenizer, m.template.clone(), ctx)?;
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    repl(
        &mut session,
        &params,
        ctx,
        stdin.lock(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
        interactive,
    )
}
