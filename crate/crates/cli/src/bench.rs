use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use danube_core::{Model, Tokenizer};
use serde::Serialize;

use crate::{CliError, Result};

const PASSAGE: &str = "The river runs past the old mill and under the stone bridge, \
where children wait for the boats to come in from the lake before supper. ";

pub const DEFAULT_REPETITIONS: u32 = 5;

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// GGUF checkpoint.
    #[arg(long, short)]
    pub model: PathBuf,
    /// Tokens to generate after the prompt; 0 times the prompt only.
    #[arg(long, default_value_t = 128)]
    pub tokens: usize,
    /// Timed repetitions; the report gives the median.
    #[arg(long, default_value_t = DEFAULT_REPETITIONS, value_parser = clap::value_parser!(u32).range(1..))]
    pub repetitions: u32,
    /// Prompt length in tokens.
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u32).range(1..))]
    pub prompt_tokens: u32,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

/// Timings of one prefill + greedy decode run.
#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub prompt_tokens: usize,
    pub prompt_seconds: f64,
    pub generated_tokens: usize,
    pub generation_seconds: f64,
    /// The decoded token ids, for checking the path is deterministic.
    #[serde(skip)]
    pub ids: Vec<u32>,
}

impl Timings {
    pub fn prompt_tps(&self) -> f64 {
        self.prompt_tokens as f64 / self.prompt_seconds.max(1e-9)
    }

    pub fn generation_tps(&self) -> f64 {
        if self.generated_tokens == 0 {
            0.0
        } else {
            self.generated_tokens as f64 / self.generation_seconds.max(1e-9)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub model: String,
    pub quantization: String,
    pub file_bytes: u64,
    pub parameter_count: u64,
    pub threads: usize,
    pub repetitions: u32,
    pub prompt_tokens: usize,
    pub prompt_seconds: f64,
    pub prompt_tokens_per_second: f64,
    pub generated_tokens: usize,
    pub generation_seconds: f64,
    pub generation_tokens_per_second: f64,
    /// Peak resident set size of the process, where the OS reports it.
    pub peak_rss_bytes: Option<u64>,
}

/// A prompt of exactly `n` tokens (BOS first) cut from a fixed passage.
pub fn bench_prompt(tok: &Tokenizer, n: usize) -> Vec<u32> {
    let mut text = PASSAGE.to_string();
    loop {
        let ids = tok.encode(&text, true);
        if ids.len() >= n {
            return ids[..n].to_vec();
        }
        text.push_str(PASSAGE);
    }
}

fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Prefills `prompt`, then decodes `tokens` greedy tokens. End-of-sequence is
/// not special here so every run does the same amount of work.
pub fn measure(model: &Model, prompt: &[u32], tokens: usize) -> Result<Timings> {
    let mut cache = model.new_cache(prompt.len() + tokens)?;
    let start = Instant::now();
    let mut logits = model.forward_last(prompt, &mut cache)?;
    let prompt_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let mut ids = Vec::with_capacity(tokens);
    for i in 0..tokens {
        let id = argmax(&logits);
        ids.push(id);
        if i + 1 < tokens {
            logits = model.forward_last(&[id], &mut cache)?;
        }
    }
    Ok(Timings {
        prompt_tokens: prompt.len(),
        prompt_seconds,
        generated_tokens: tokens,
        generation_seconds: start.elapsed().as_secs_f64(),
        ids,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Runs `measure` `reps` times after one warm-up and keeps the median
/// prompt and generation times. Single short runs are at the mercy of
/// scheduler noise.
pub fn measure_median(model: &Model, prompt: &[u32], tokens: usize, reps: usize) -> Result<Timings> {
    measure(model, prompt, tokens)?;
    let runs = (0..reps.max(1)).map(|_| measure(model, prompt, tokens)).collect::<Result<Vec<_>>>()?;
    let prompt_seconds = median(runs.iter().map(|r| r.prompt_seconds).collect());
    let generation_seconds = median(runs.iter().map(|r| r.generation_seconds).collect());
    let first = runs.into_iter().next().expect("at least one run");
    Ok(Timings { prompt_seconds, generation_seconds, ..first })
}

/// `VmHWM` from `/proc/self/status`.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

pub fn run(args: &BenchArgs) -> Result<()> {
    let g = danube_core::read_gguf(&args.model)?;
    let file_bytes = std::fs::metadata(&args.model)?.len();
    let (model, tok) = danube_core::load_model(&g)?;
    let prompt_len = args.prompt_tokens as usize;
    let max = model.config().max_context;
    if prompt_len + args.tokens > max {
        return Err(CliError::Usage(format!(
            "--prompt-tokens + --tokens = {} exceeds the model context of {max}",
            prompt_len + args.tokens
        )));
    }
    let prompt = bench_prompt(&tok, prompt_len);
    let t = measure_median(&model, &prompt, args.tokens, args.repetitions as usize)?;
    let name = g
        .get("general.name")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .unwrap_or_else(|| args.model.display().to_string());
    let report = BenchReport {
        model: name,
        quantization: model.weight_dtype().to_string(),
        file_bytes,
        parameter_count: model.count_parameters(),
        threads: rayon::current_num_threads(),
        repetitions: args.repetitions,
        prompt_tokens: t.prompt_tokens,
        prompt_seconds: t.prompt_seconds,
        prompt_tokens_per_second: t.prompt_tps(),
        generated_tokens: t.generated_tokens,
        generation_seconds: t.generation_seconds,
        generation_tokens_per_second: t.generation_tps(),
        peak_rss_bytes: peak_rss_bytes(),
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        return Ok(());
    }
    println!("model:       {} ({}, {} bytes, {} parameters)", report.model, report.quantization, report.file_bytes, report.parameter_count);
    println!("threads:     {}", report.threads);
    println!("repetitions: {} (median reported)", report.repetitions);
    println!(
        "prompt:      {} tokens in {:.3} s ({:.1} tok/s)",
        report.prompt_tokens, report.prompt_seconds, report.prompt_tokens_per_second
    );
    println!(
        "generation:  {} tokens in {:.3} s ({:.1} tok/s)",
        report.generated_tokens, report.generation_seconds, report.generation_tokens_per_second
    );
    match report.peak_rss_bytes {
        Some(b) => println!("peak RSS:    {:.1} MiB", b as f64 / (1024.0 * 1024.0)),
        None => println!("peak RSS:    unavailable"),
    }
    Ok(())
}
