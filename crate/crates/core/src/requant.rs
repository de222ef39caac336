//! Re-encoding a GGUF checkpoint to another weight type.

use std::fmt;

use crate::error::{Error, Result};
use crate::gguf::{GgufBuilder, GgufFile, MetadataValue};
use crate::quant::{GgmlType, QuantPolicy, QuantType, QK};
use crate::tensor::{DType, Tensor};

/// llama.cpp `general.file_type` value for an encodable method.
pub fn file_type_id(q: QuantType) -> Option<u32> {
    match q {
        QuantType::F32 => Some(0),
        QuantType::F16 => Some(1),
        QuantType::Q4_0 => Some(2),
        QuantType::Q8_0 => Some(7),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RequantSummary {
    pub target: QuantType,
    pub policy: QuantPolicy,
    pub input_bytes: u64,
    pub output_bytes: u64,
    /// Payload of 2-D weight tensors before and after.
    pub input_weight_bytes: u64,
    pub output_weight_bytes: u64,
    pub converted: usize,
    pub kept: usize,
}

impl RequantSummary {
    pub fn file_ratio(&self) -> f64 {
        self.input_bytes as f64 / self.output_bytes as f64
    }

    pub fn weight_ratio(&self) -> f64 {
        self.input_weight_bytes as f64 / self.output_weight_bytes as f64
    }
}

impl fmt::Display for RequantSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "target:        {}", self.target)?;
        writeln!(f, "policy:        {:?}", self.policy)?;
        writeln!(f, "tensors:       {} converted, {} kept", self.converted, self.kept)?;
        writeln!(f, "file size:     {} -> {} bytes ({:.3}x)", self.input_bytes, self.output_bytes, self.file_ratio())?;
        write!(
            f,
            "weight bytes:  {} -> {} bytes ({:.3}x)",
            self.input_weight_bytes,
            self.output_weight_bytes,
            self.weight_ratio()
        )
    }
}

/// Re-encodes every 2-D tensor to `target`. Vectors are stored as F32, and
/// matrices whose rows are not a multiple of the block size keep their
/// float type. Metadata is copied with `general.file_type` updated.
pub fn requantize(g: &GgufFile, target: QuantType) -> Result<(GgufFile, RequantSummary)> {
    let dtype = target
        .encodable()
        .ok_or_else(|| Error::Unsupported(format!("cannot encode {target}; supported: F32, F16, Q8_0, Q4_0")))?;
    let mut metadata = g.metadata.clone();
    metadata.insert("general.file_type".into(), MetadataValue::U32(file_type_id(target).expect("encodable")));
    if dtype.is_quantized() {
        metadata.insert("general.quantization_version".into(), MetadataValue::U32(2));
    } else {
        metadata.shift_remove("general.quantization_version");
    }

    let mut b = GgufBuilder::with_metadata(metadata);
    let (mut converted, mut kept) = (0, 0);
    let (mut in_w, mut out_w) = (0u64, 0u64);
    for info in &g.tensors {
        let is_matrix = info.dims.len() >= 2;
        let want = if !is_matrix {
            DType::F32
        } else if dtype.is_quantized() && info.dims[0] as usize % QK != 0 {
            match info.ggml_type {
                GgmlType::F16 => DType::F16,
                _ => DType::F32,
            }
        } else {
            dtype
        };
        let out = if GgmlType::from(want) == info.ggml_type {
            kept += 1;
            g.tensor(&info.name)?
        } else {
            converted += 1;
            let t = g.tensor(&info.name)?;
            Tensor::quantize(t.shape().to_vec(), &t.to_f32()?, want)?
        };
        if is_matrix {
            in_w += info.byte_size()?;
            out_w += out.bytes().len() as u64;
        }
        b.tensor(info.name.clone(), &out);
    }
    let out = b.build()?;
    let summary = RequantSummary {
        target,
        policy: QuantPolicy::KeepNormsF32,
        input_bytes: g.header_len() + g.data.len() as u64,
        output_bytes: out.header_len() + out.data.len() as u64,
        input_weight_bytes: in_w,
        output_weight_bytes: out_w,
        converted,
        kept,
    };
    Ok((out, summary))
}
