use std::path::PathBuf;

use clap::{Args, ValueEnum};
use danube_core::quant::predict_model_size;
use danube_core::requant::requantize;
use danube_core::{read_gguf, ModelConfig, QuantPolicy, QuantType};

use crate::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[allow(non_camel_case_types)]
pub enum TargetType {
    #[value(name = "f32")]
    F32,
    #[value(name = "f16")]
    F16,
    #[value(name = "q8_0")]
    Q8_0,
    #[value(name = "q4_0")]
    Q4_0,
}

impl From<TargetType> for QuantType {
    fn from(t: TargetType) -> Self {
        match t {
            TargetType::F32 => QuantType::F32,
            TargetType::F16 => QuantType::F16,
            TargetType::Q8_0 => QuantType::Q8_0,
            TargetType::Q4_0 => QuantType::Q4_0,
        }
    }
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Input GGUF file.
    #[arg(long = "in", value_name = "GGUF")]
    pub input: PathBuf,
    /// Output GGUF file.
    #[arg(long, value_name = "GGUF")]
    pub out: PathBuf,
    /// Target weight type.
    #[arg(long = "type", value_enum)]
    pub ty: TargetType,
}

pub fn run(args: &QuantizeArgs) -> Result<()> {
    if args.out.exists() && std::fs::canonicalize(&args.input)? == std::fs::canonicalize(&args.out)? {
        return Err(CliError::Usage("--out must differ from --in".into()));
    }
    let target = QuantType::from(args.ty);
    let g = read_gguf(&args.input)?;
    let (q, summary) = requantize(&g, target)?;
    q.write(&args.out)?;
    println!("wrote {}", args.out.display());
    println!("{summary}");
    println!("kept F32:      1-D tensors (norm weights); matrices whose rows are not a multiple of 32 keep their input type");
    if let Ok(config) = ModelConfig::from_gguf(&g) {
        let predicted = predict_model_size(&config, target, QuantPolicy::KeepNormsF32);
        println!("predicted:     {predicted} bytes for {target} under {:?}", QuantPolicy::KeepNormsF32);
    }
    Ok(())
}
