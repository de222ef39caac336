use std::path::PathBuf;

use clap::Args;
use danube_core::eval::{format_size_quality, perplexity, size_quality_table, PerplexityConfig};
use danube_core::{load_model, read_gguf, QuantType};

use crate::{CliError, Result};

#[derive(Debug, Args)]
pub struct PerplexityArgs {
    /// GGUF checkpoint.
    #[arg(long, short)]
    pub model: PathBuf,
    /// UTF-8 text corpus.
    #[arg(long, short)]
    pub file: PathBuf,
    /// Tokens per evaluation window.
    #[arg(long, default_value_t = 512)]
    pub window: usize,
    /// Score at most this many windows.
    #[arg(long)]
    pub max_windows: Option<usize>,
    /// Also re-encode the model to each of these methods (comma separated,
    /// e.g. `f16,q8_0,q4_0`) and print a size / perplexity table.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<QuantType>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

pub fn run(args: &PerplexityArgs) -> Result<()> {
    if args.window < 4 {
        return Err(CliError::Usage(format!("--window must be at least 4, got {}", args.window)));
    }
    let cfg = PerplexityConfig { window: args.window, max_windows: args.max_windows, ..Default::default() };
    let text = std::fs::read_to_string(&args.file)?;
    let corpus = args.file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let g = read_gguf(&args.model)?;
    if !args.methods.is_empty() {
        let rows = size_quality_table(&g, &args.methods, &text, &corpus, &cfg)?;
        if args.json {
            println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
        } else {
            print!("{}", format_size_quality(&rows));
        }
        return Ok(());
    }
    let (model, tok) = load_model(&g)?;
    let report = perplexity(&model, &tok, &text, &corpus, &cfg)?;
    if args.json {
        println!("{}", report.to_json());
    } else {
        println!("{report}");
    }
    Ok(())
}
