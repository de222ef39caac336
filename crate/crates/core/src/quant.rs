//! Block quantization formats.
//!
//! `Q8_0` and `Q4_0` follow the GGML block layouts: a little-endian F16
//! scale followed by packed codes, 32 weights per block. K-quant types are
//! known here only for directory parsing and size accounting.

use std::fmt;
use std::str::FromStr;

use half::f16;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::{f16_bits, DType};

/// Weights per block for the 32-element formats.
pub const QK: usize = 32;
pub const Q8_0_BYTES: usize = 2 + QK;
pub const Q4_0_BYTES: usize = 2 + QK / 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockQ8_0 {
    pub d: f16,
    pub qs: [i8; QK],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockQ4_0 {
    pub d: f16,
    /// Low nibble holds element `i`, high nibble element `i + 16`.
    pub qs: [u8; QK / 2],
}

fn check_finite(x: &[f32]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!("non-finite value {} at index {i}", x[i]))),
        None => Ok(()),
    }
}

fn check_block(x: &[f32]) -> Result<()> {
    if x.len() != QK {
        return Err(Error::shape(format!("a block holds {QK} values, got {}", x.len())));
    }
    check_finite(x)
}

pub fn quantize_block_q8_0(x: &[f32]) -> Result<BlockQ8_0> {
    check_block(x)?;
    let amax = x.iter().fold(0f32, |m, v| m.max(v.abs()));
    let d = amax / 127.0;
    let id = if d != 0.0 { 1.0 / d } else { 0.0 };
    let mut qs = [0i8; QK];
    for (q, &v) in qs.iter_mut().zip(x) {
        // f32::round rounds half away from zero
        *q = (v * id).round() as i8;
    }
    Ok(BlockQ8_0 { d: f16::from_f32(d), qs })
}

pub fn quantize_block_q4_0(x: &[f32]) -> Result<BlockQ4_0> {
    check_block(x)?;
    let mut amax = 0f32;
    let mut max = 0f32;
    for &v in x {
        if v.abs() > amax {
            amax = v.abs();
            max = v;
        }
    }
    let d = max / -8.0;
    let id = if d != 0.0 { 1.0 / d } else { 0.0 };
    let code = |v: f32| -> u8 { ((v * id).round() + 8.0).clamp(0.0, 15.0) as u8 };
    let mut qs = [0u8; QK / 2];
    for (j, q) in qs.iter_mut().enumerate() {
        *q = code(x[j]) | (code(x[j + QK / 2]) << 4);
    }
    Ok(BlockQ4_0 { d: f16::from_f32(d), qs })
}

impl BlockQ8_0 {
    pub fn to_bytes(&self) -> [u8; Q8_0_BYTES] {
        let mut out = [0u8; Q8_0_BYTES];
        out[..2].copy_from_slice(&self.d.to_le_bytes());
        for (o, q) in out[2..].iter_mut().zip(self.qs) {
            *o = q as u8;
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() != Q8_0_BYTES {
            return Err(Error::Format(format!("Q8_0 block is {Q8_0_BYTES} bytes, got {}", b.len())));
        }
        let mut qs = [0i8; QK];
        for (q, &v) in qs.iter_mut().zip(&b[2..]) {
            *q = v as i8;
        }
        Ok(Self { d: f16::from_le_bytes([b[0], b[1]]), qs })
    }

    pub fn dequantize(&self) -> [f32; QK] {
        let d = self.d.to_f32();
        self.qs.map(|q| q as f32 * d)
    }
}

impl BlockQ4_0 {
    pub fn to_bytes(&self) -> [u8; Q4_0_BYTES] {
        let mut out = [0u8; Q4_0_BYTES];
        out[..2].copy_from_slice(&self.d.to_le_bytes());
        out[2..].copy_from_slice(&self.qs);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() != Q4_0_BYTES {
            return Err(Error::Format(format!("Q4_0 block is {Q4_0_BYTES} bytes, got {}", b.len())));
        }
        let mut qs = [0u8; QK / 2];
        qs.copy_from_slice(&b[2..]);
        Ok(Self { d: f16::from_le_bytes([b[0], b[1]]), qs })
    }

    /// Code (0..=15) of element `i`.
    pub fn code(&self, i: usize) -> u8 {
        if i < QK / 2 {
            self.qs[i] & 0x0F
        } else {
            self.qs[i - QK / 2] >> 4
        }
    }

    pub fn dequantize(&self) -> [f32; QK] {
        let d = self.d.to_f32();
        std::array::from_fn(|i| (self.code(i) as i32 - 8) as f32 * d)
    }
}

/// Appends the encoding of `row` in `dtype` to `out`.
pub fn encode_row(row: &[f32], dtype: DType, out: &mut Vec<u8>) -> Result<()> {
    match dtype {
        DType::F32 => row.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F16 => row
            .iter()
            .for_each(|v| out.extend_from_slice(&f16::from_f32(*v).to_le_bytes())),
        DType::Q8_0 | DType::Q4_0 => {
            if row.len() % QK != 0 {
                return Err(Error::Format(format!(
                    "{dtype} row length {} is not divisible by {QK}",
                    row.len()
                )));
            }
            for block in row.chunks_exact(QK) {
                if dtype == DType::Q8_0 {
                    out.extend_from_slice(&quantize_block_q8_0(block)?.to_bytes());
                } else {
                    out.extend_from_slice(&quantize_block_q4_0(block)?.to_bytes());
                }
            }
        }
    }
    Ok(())
}

pub fn quantize_row(row: &[f32], dtype: DType) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(dtype.row_bytes(row.len()).unwrap_or(0));
    encode_row(row, dtype, &mut out)?;
    Ok(out)
}

/// Decodes `src` into `out`; `out.len()` sets the element count.
pub fn dequantize_row(src: &[u8], dtype: DType, out: &mut [f32]) -> Result<()> {
    let need = dtype.row_bytes(out.len())?;
    if src.len() != need {
        return Err(Error::shape(format!(
            "{dtype} row of {} elements needs {need} bytes, got {}",
            out.len(),
            src.len()
        )));
    }
    match dtype {
        DType::F32 => {
            for (o, c) in out.iter_mut().zip(src.chunks_exact(4)) {
                *o = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
        }
        DType::F16 => {
            for (o, c) in out.iter_mut().zip(src.chunks_exact(2)) {
                *o = f16_bits([c[0], c[1]]);
            }
        }
        DType::Q8_0 => {
            for (o, b) in out.chunks_exact_mut(QK).zip(src.chunks_exact(Q8_0_BYTES)) {
                let d = f16_bits([b[0], b[1]]);
                for (v, &q) in o.iter_mut().zip(&b[2..]) {
                    *v = q as i8 as f32 * d;
                }
            }
        }
        DType::Q4_0 => {
            for (o, b) in out.chunks_exact_mut(QK).zip(src.chunks_exact(Q4_0_BYTES)) {
                let d = f16_bits([b[0], b[1]]);
                let (lo, hi) = o.split_at_mut(QK / 2);
                for j in 0..QK / 2 {
                    let q = b[2 + j];
                    lo[j] = ((q & 0x0F) as i32 - 8) as f32 * d;
                    hi[j] = ((q >> 4) as i32 - 8) as f32 * d;
                }
            }
        }
    }
    Ok(())
}

/// Dequantizes a row stored as `ggml_type`, rejecting types this engine
/// cannot decode.
pub fn dequantize_row_ggml(src: &[u8], ty: GgmlType, out: &mut [f32]) -> Result<()> {
    let dtype = ty.dtype().ok_or_else(|| {
        Error::Unsupported(format!("cannot decode {ty} tensors; supported: F32, F16, Q8_0, Q4_0"))
    })?;
    dequantize_row(src, dtype, out)
}

/// Dot product of an F32 row with an encoded row.
///
/// Accumulates `a[t] * deq(b)[t]` in ascending `t` so the result is
/// bit-identical to dequantizing first and taking a sequential dot product.
pub fn vec_dot(a: &[f32], b: &[u8], dtype: DType) -> Result<f32> {
    let need = dtype.row_bytes(a.len())?;
    if b.len() != need {
        return Err(Error::shape(format!(
            "vec_dot: {} activations against {} bytes of {dtype} (expected {need})",
            a.len(),
            b.len()
        )));
    }
    Ok(vec_dot_unchecked(a, b, dtype))
}

pub(crate) fn vec_dot_unchecked(a: &[f32], b: &[u8], dtype: DType) -> f32 {
    let mut acc = 0f32;
    match dtype {
        DType::F32 => {
            for (x, c) in a.iter().zip(b.chunks_exact(4)) {
                acc += x * f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
        }
        DType::F16 => {
            for (x, c) in a.iter().zip(b.chunks_exact(2)) {
                acc += x * f16_bits([c[0], c[1]]);
            }
        }
        DType::Q8_0 => {
            for (xs, blk) in a.chunks_exact(QK).zip(b.chunks_exact(Q8_0_BYTES)) {
                let d = f16_bits([blk[0], blk[1]]);
                for (x, &q) in xs.iter().zip(&blk[2..]) {
                    acc += x * (q as i8 as f32 * d);
                }
            }
        }
        DType::Q4_0 => {
            for (xs, blk) in a.chunks_exact(QK).zip(b.chunks_exact(Q4_0_BYTES)) {
                let d = f16_bits([blk[0], blk[1]]);
                let qs = &blk[2..];
                for j in 0..QK / 2 {
                    acc += xs[j] * (((qs[j] & 0x0F) as i32 - 8) as f32 * d);
                }
                for j in 0..QK / 2 {
                    acc += xs[j + QK / 2] * (((qs[j] >> 4) as i32 - 8) as f32 * d);
                }
            }
        }
    }
    acc
}

/// GGML tensor element types as numbered in GGUF files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GgmlType {
    F32,
    F16,
    Q4_0,
    Q4_1,
    Q5_0,
    Q5_1,
    Q8_0,
    Q8_1,
    Q2K,
    Q3K,
    Q4K,
    Q5K,
    Q6K,
    Q8K,
    BF16,
}

impl GgmlType {
    pub fn from_id(id: u32) -> Option<Self> {
        Some(match id {
            0 => Self::F32,
            1 => Self::F16,
            2 => Self::Q4_0,
            3 => Self::Q4_1,
            6 => Self::Q5_0,
            7 => Self::Q5_1,
            8 => Self::Q8_0,
            9 => Self::Q8_1,
            10 => Self::Q2K,
            11 => Self::Q3K,
            12 => Self::Q4K,
            13 => Self::Q5K,
            14 => Self::Q6K,
            15 => Self::Q8K,
            30 => Self::BF16,
            _ => return None,
        })
    }

    pub fn id(self) -> u32 {
        match self {
            Self::F32 => 0,
            Self::F16 => 1,
            Self::Q4_0 => 2,
            Self::Q4_1 => 3,
            Self::Q5_0 => 6,
            Self::Q5_1 => 7,
            Self::Q8_0 => 8,
            Self::Q8_1 => 9,
            Self::Q2K => 10,
            Self::Q3K => 11,
            Self::Q4K => 12,
            Self::Q5K => 13,
            Self::Q6K => 14,
            Self::Q8K => 15,
            Self::BF16 => 30,
        }
    }

    /// (elements per block, bytes per block)
    pub fn layout(self) -> (usize, usize) {
        match self {
            Self::F32 => (1, 4),
            Self::F16 | Self::BF16 => (1, 2),
            Self::Q4_0 => (32, 18),
            Self::Q4_1 => (32, 20),
            Self::Q5_0 => (32, 22),
            Self::Q5_1 => (32, 24),
            Self::Q8_0 => (32, 34),
            Self::Q8_1 => (32, 36),
            Self::Q2K => (256, 84),
            Self::Q3K => (256, 110),
            Self::Q4K => (256, 144),
            Self::Q5K => (256, 176),
            Self::Q6K => (256, 210),
            Self::Q8K => (256, 292),
        }
    }

    pub fn bits_per_weight(self) -> f64 {
        let (n, b) = self.layout();
        b as f64 * 8.0 / n as f64
    }

    /// The engine dtype, if this type can be decoded.
    pub fn dtype(self) -> Option<DType> {
        match self {
            Self::F32 => Some(DType::F32),
            Self::F16 => Some(DType::F16),
            Self::Q8_0 => Some(DType::Q8_0),
            Self::Q4_0 => Some(DType::Q4_0),
            _ => None,
        }
    }

    /// Bytes for `n` elements, `None` when `n` is not block-aligned.
    pub fn bytes_for(self, n: u64) -> Option<u64> {
        let (bs, bb) = self.layout();
        if n % bs as u64 != 0 {
            return None;
        }
        (n / bs as u64).checked_mul(bb as u64)
    }
}

impl From<DType> for GgmlType {
    fn from(d: DType) -> Self {
        match d {
            DType::F32 => Self::F32,
            DType::F16 => Self::F16,
            DType::Q8_0 => Self::Q8_0,
            DType::Q4_0 => Self::Q4_0,
        }
    }
}

impl fmt::Display for GgmlType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::F32 => "F32",
            Self::F16 => "F16",
            Self::Q4_0 => "Q4_0",
            Self::Q4_1 => "Q4_1",
            Self::Q5_0 => "Q5_0",
            Self::Q5_1 => "Q5_1",
            Self::Q8_0 => "Q8_0",
            Self::Q8_1 => "Q8_1",
            Self::Q2K => "Q2_K",
            Self::Q3K => "Q3_K",
            Self::Q4K => "Q4_K",
            Self::Q5K => "Q5_K",
            Self::Q6K => "Q6_K",
            Self::Q8K => "Q8_K",
            Self::BF16 => "BF16",
        };
        f.write_str(s)
    }
}

/// Whole-model quantization methods, as named in llama.cpp file types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[allow(non_camel_case_types)]
pub enum QuantType {
    F32,
    F16,
    Q8_0,
    Q4_0,
    Q6_K,
    Q5_K_M,
    Q4_K_M,
    Q3_K_M,
    Q2_K,
}

impl QuantType {
    pub const ALL: [QuantType; 9] = [
        QuantType::F32,
        QuantType::F16,
        QuantType::Q8_0,
        QuantType::Q6_K,
        QuantType::Q5_K_M,
        QuantType::Q4_K_M,
        QuantType::Q4_0,
        QuantType::Q3_K_M,
        QuantType::Q2_K,
    ];

    /// Engine dtype when this method can be encoded, else `None`
    /// (accounting-only).
    pub fn encodable(self) -> Option<DType> {
        match self {
            QuantType::F32 => Some(DType::F32),
            QuantType::F16 => Some(DType::F16),
            QuantType::Q8_0 => Some(DType::Q8_0),
            QuantType::Q4_0 => Some(DType::Q4_0),
            _ => None,
        }
    }

    /// Storage type of 2-D weights that no mixing rule promotes.
    pub fn base_type(self) -> GgmlType {
        match self {
            QuantType::F32 => GgmlType::F32,
            QuantType::F16 => GgmlType::F16,
            QuantType::Q8_0 => GgmlType::Q8_0,
            QuantType::Q4_0 => GgmlType::Q4_0,
            QuantType::Q6_K => GgmlType::Q6K,
            QuantType::Q5_K_M => GgmlType::Q5K,
            QuantType::Q4_K_M => GgmlType::Q4K,
            QuantType::Q3_K_M => GgmlType::Q3K,
            QuantType::Q2_K => GgmlType::Q2K,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QuantType::F32 => "F32",
            QuantType::F16 => "F16",
            QuantType::Q8_0 => "Q8_0",
            QuantType::Q4_0 => "Q4_0",
            QuantType::Q6_K => "Q6_K",
            QuantType::Q5_K_M => "Q5_K_M",
            QuantType::Q4_K_M => "Q4_K_M",
            QuantType::Q3_K_M => "Q3_K_M",
            QuantType::Q2_K => "Q2_K",
        }
    }
}

impl fmt::Display for QuantType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuantType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QuantType::ALL
            .into_iter()
            .find(|q| q.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Unsupported(format!("unknown quantization method {s:?}")))
    }
}

/// Which tensors keep higher precision when a model is quantized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuantPolicy {
    /// Every tensor, including norm vectors, stored in the base type.
    Uniform,
    /// 1-D tensors stay F32; everything else uses the base type. This is
    /// what `danube quantize` writes.
    #[default]
    KeepNormsF32,
    /// llama.cpp mixing rules: 1-D tensors F32, the output head and selected
    /// attention-value / feed-forward-down layers promoted.
    Reference,
}

/// Layers that the `_M` mixes promote to more bits.
fn use_more_bits(layer: usize, n_layers: usize) -> bool {
    layer < n_layers / 8 || layer >= 7 * n_layers / 8 || (layer >= n_layers / 8 && (layer - n_layers / 8) % 3 == 2)
}

/// Storage type a tensor gets under `policy`.
pub fn storage_type(
    config: &ModelConfig,
    name: &str,
    shape: &[usize],
    quant: QuantType,
    policy: QuantPolicy,
) -> GgmlType {
    let base = quant.base_type();
    if shape.len() == 1 && policy != QuantPolicy::Uniform {
        return GgmlType::F32;
    }
    if policy != QuantPolicy::Reference {
        return base;
    }
    let layer = name
        .strip_prefix("blk.")
        .and_then(|s| s.split('.').next())
        .and_then(|s| s.parse::<usize>().ok());
    let n = config.n_layers;
    let role = name.rsplit('.').nth(1).unwrap_or("");
    use GgmlType::*;
    match (quant, role, layer) {
        (QuantType::F32 | QuantType::F16 | QuantType::Q8_0, _, _) => base,
        (_, "output", None) => Q6K,
        (QuantType::Q5_K_M | QuantType::Q4_K_M, "attn_v" | "ffn_down", Some(i)) if use_more_bits(i, n) => Q6K,
        (QuantType::Q3_K_M, "attn_v", Some(i)) => {
            if i < 2 {
                Q5K
            } else {
                Q4K
            }
        }
        (QuantType::Q3_K_M, "ffn_down", Some(i)) => {
            if i < n / 16 {
                Q5K
            } else {
                Q4K
            }
        }
        (QuantType::Q3_K_M, "attn_output", Some(_)) => Q4K,
        (QuantType::Q2_K, "attn_v", Some(_)) => {
            if config.n_heads / config.n_kv_heads >= 4 {
                Q4K
            } else {
                Q3K
            }
        }
        (QuantType::Q2_K, "ffn_down" | "attn_output", Some(_)) => Q3K,
        _ => base,
    }
}

/// Default GGUF tensor alignment.
pub const GGUF_ALIGNMENT: u64 = 32;

/// Estimated container overhead (header, metadata including the
/// vocabulary, tensor directory and worst-case alignment padding).
pub fn container_overhead(config: &ModelConfig) -> u64 {
    // magic, version, tensor count, kv count
    let header = 24u64;
    // architecture keys, names and the chat template
    let fixed_metadata = 4096u64;
    // per token: string length prefix + ~6 bytes text + f32 score + i32 type
    let vocab = config.vocab_size as u64 * (8 + 6 + 4 + 4);
    let directory: u64 = config
        .tensor_shapes()
        .iter()
        .map(|(name, shape)| 8 + name.len() as u64 + 4 + 8 * shape.len() as u64 + 4 + 8)
        .sum();
    let padding = GGUF_ALIGNMENT * config.tensor_shapes().len() as u64;
    header + fixed_metadata + vocab + directory + padding
}

/// Sum of tensor payload bytes under `policy`, without container overhead.
pub fn predict_payload_size(config: &ModelConfig, quant: QuantType, policy: QuantPolicy) -> u64 {
    config
        .tensor_shapes()
        .iter()
        .map(|(name, shape)| {
            let n: u64 = shape.iter().map(|&d| d as u64).product();
            let ty = storage_type(config, name, shape, quant, policy);
            // K-quant accounting for rows not divisible by 256 falls back to
            // fractional bits per weight.
            ty.bytes_for(n)
                .unwrap_or_else(|| (n as f64 * ty.bits_per_weight() / 8.0).ceil() as u64)
        })
        .sum()
}

/// Predicted GGUF file size in bytes.
pub fn predict_model_size(config: &ModelConfig, quant: QuantType, policy: QuantPolicy) -> u64 {
    predict_payload_size(config, quant, policy) + container_overhead(config)
}
