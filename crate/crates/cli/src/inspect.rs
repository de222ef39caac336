use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use danube_core::gguf::{GgufFile, MetadataValue};
use danube_core::{read_gguf, ModelConfig};
use serde::Serialize;
use serde_json::{json, Value};

use crate::Result;

/// Arrays longer than this are summarised rather than listed.
const ARRAY_PREVIEW: usize = 8;

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// GGUF file to inspect.
    #[arg(long, short)]
    pub model: PathBuf,
    /// Print a JSON document instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorRow {
    pub name: String,
    /// Row-major shape (GGUF stores dimensions innermost first).
    pub shape: Vec<usize>,
    #[serde(rename = "type")]
    pub ty: String,
    pub bytes: u64,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Inspection {
    pub path: String,
    pub file_bytes: u64,
    pub version: u32,
    pub alignment: u64,
    pub metadata: serde_json::Map<String, Value>,
    pub tensors: Vec<TensorRow>,
    pub config: Option<ModelConfig>,
    pub config_error: Option<String>,
    pub parameter_count: Option<u64>,
}

fn scalar_json(v: &MetadataValue) -> Value {
    match v {
        MetadataValue::U8(x) => json!(x),
        MetadataValue::I8(x) => json!(x),
        MetadataValue::U16(x) => json!(x),
        MetadataValue::I16(x) => json!(x),
        MetadataValue::U32(x) => json!(x),
        MetadataValue::I32(x) => json!(x),
        MetadataValue::U64(x) => json!(x),
        MetadataValue::I64(x) => json!(x),
        MetadataValue::F32(x) => json!(x),
        MetadataValue::F64(x) => json!(x),
        MetadataValue::Bool(x) => json!(x),
        MetadataValue::String(s) => json!(s),
        MetadataValue::Array(a) => {
            if a.values.len() > ARRAY_PREVIEW {
                json!({ "type": format!("{:?}", a.elem_type).to_lowercase(), "len": a.values.len() })
            } else {
                Value::Array(a.values.iter().map(scalar_json).collect())
            }
        }
    }
}

fn shorten(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        return format!("{s:?}");
    }
    let head: String = s.chars().take(max).collect();
    format!("{head:?}... ({} chars)", s.chars().count())
}

fn metadata_text(v: &MetadataValue) -> String {
    match v {
        MetadataValue::String(s) => shorten(s, 60),
        MetadataValue::Array(a) if a.values.len() > ARRAY_PREVIEW => {
            format!("[{} x {}]", a.values.len(), format!("{:?}", a.elem_type).to_lowercase())
        }
        MetadataValue::Array(a) => {
            let items: Vec<String> = a.values.iter().map(metadata_text).collect();
            format!("[{}]", items.join(", "))
        }
        other => scalar_json(other).to_string(),
    }
}

pub fn inspect(g: &GgufFile, path: &str, file_bytes: u64) -> Result<Inspection> {
    let tensors = g
        .tensors
        .iter()
        .map(|t| {
            Ok(TensorRow {
                name: t.name.clone(),
                shape: t.shape(),
                ty: t.ggml_type.to_string(),
                bytes: t.byte_size()?,
                offset: t.offset,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (config, config_error) = match ModelConfig::from_gguf(g) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(Inspection {
        path: path.to_string(),
        file_bytes,
        version: g.version,
        alignment: g.alignment(),
        metadata: g.metadata.iter().map(|(k, v)| (k.clone(), scalar_json(v))).collect(),
        tensors,
        parameter_count: config.as_ref().map(ModelConfig::count_parameters),
        config,
        config_error,
    })
}

pub fn render_text(ins: &Inspection, g: &GgufFile) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "file: {} ({} bytes)", ins.path, ins.file_bytes);
    let _ = writeln!(
        s,
        "format: GGUF v{}, alignment {}, {} metadata keys, {} tensors",
        ins.version,
        ins.alignment,
        g.metadata.len(),
        ins.tensors.len()
    );
    let _ = writeln!(s, "\nmetadata:");
    for (k, v) in &g.metadata {
        let _ = writeln!(s, "  {k} = {}", metadata_text(v));
    }
    let _ = writeln!(s, "\ntensors:");
    let width = ins.tensors.iter().map(|t| t.name.len()).max().unwrap_or(4).max(4);
    let _ = writeln!(s, "  {:<width$}  {:<14}  {:<5}  {:>12}", "name", "shape", "type", "bytes");
    for t in &ins.tensors {
        let shape = t.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        let _ = writeln!(s, "  {:<width$}  {:<14}  {:<5}  {:>12}", t.name, shape, t.ty, t.bytes);
    }
    let payload: u64 = ins.tensors.iter().map(|t| t.bytes).sum();
    let _ = writeln!(s, "  total payload: {payload} bytes");
    let _ = writeln!(s, "\nconfig:");
    match (&ins.config, &ins.config_error) {
        (Some(c), _) => {
            let _ = writeln!(s, "  layers: {}, hidden: {}, heads: {}/{}", c.n_layers, c.hidden_size, c.n_heads, c.n_kv_heads);
            let _ = writeln!(
                s,
                "  head size: {}, intermediate: {}, vocab: {}, context: {}",
                c.head_size, c.intermediate_size, c.vocab_size, c.max_context
            );
            let _ = writeln!(
                s,
                "  rope theta: {}, rms eps: {:e}, tied embeddings: {}",
                c.rope_theta,
                c.rms_eps,
                if c.tied_embeddings { "yes" } else { "no" }
            );
        }
        (None, Some(e)) => {
            let _ = writeln!(s, "  unavailable: {e}");
        }
        (None, None) => {}
    }
    if let Some(n) = ins.parameter_count {
        let _ = writeln!(s, "parameters: {n} ({:.2}B)", n as f64 / 1e9);
    }
    s
}

pub fn run(args: &InspectArgs) -> Result<()> {
    let g = read_gguf(&args.model)?;
    let file_bytes = std::fs::metadata(&args.model)?.len();
    let ins = inspect(&g, &args.model.display().to_string(), file_bytes)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&ins).expect("inspection serializes"));
    } else {
        print!("{}", render_text(&ins, &g));
    }
    Ok(())
}
