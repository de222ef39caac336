//! Numeric kernels used by the forward pass.
//!
//! Every reduction runs sequentially per output element, so results do not
//! depend on how rows are split across worker threads.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quant::vec_dot_unchecked;
use crate::tensor::{DType, Tensor};

/// Output rows handed to a single rayon task.
const ROWS_PER_TASK: usize = 16;

/// `out[i][j] = Σ_t a[i][t] · w[j][t]` for `a` of shape `m × k` and weights
/// stored as `n` rows of `k`.
pub fn matmul_f32(a: &[f32], m: usize, w: &Tensor) -> Result<Vec<f32>> {
    let (n, k) = (w.rows(), w.cols());
    if a.len() != m * k {
        return Err(Error::shape(format!(
            "matmul: activations of length {} are not {m}×{k}",
            a.len()
        )));
    }
    if w.dtype().is_quantized() && k % crate::quant::QK != 0 {
        return Err(Error::Format(format!("matmul: quantized rows of {k} not divisible by 32")));
    }
    let dtype = w.dtype();
    let data = w.bytes();
    let row_bytes = data.len() / n;

    // transposed result: one contiguous column per weight row
    let mut cols = vec![0f32; m * n];
    cols.par_chunks_mut(m * ROWS_PER_TASK)
        .enumerate()
        .for_each(|(task, chunk)| {
            for (r, col) in chunk.chunks_mut(m).enumerate() {
                let j = task * ROWS_PER_TASK + r;
                let wrow = &data[j * row_bytes..(j + 1) * row_bytes];
                for (i, out) in col.iter_mut().enumerate() {
                    *out = vec_dot_unchecked(&a[i * k..(i + 1) * k], wrow, dtype);
                }
            }
        });

    if m == 1 {
        return Ok(cols);
    }
    let mut out = vec![0f32; m * n];
    for j in 0..n {
        for i in 0..m {
            out[i * n + j] = cols[j * m + i];
        }
    }
    Ok(out)
}

/// Tensor-level matmul: `a` is `m × k` F32, `b` is `n × k`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dtype() != DType::F32 {
        return Err(Error::shape(format!("matmul: activations must be F32, got {}", a.dtype())));
    }
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::shape("matmul expects 2-D operands"));
    }
    if a.cols() != b.cols() {
        return Err(Error::shape(format!(
            "matmul: inner dimensions differ ({:?} vs {:?})",
            a.shape(),
            b.shape()
        )));
    }
    let m = a.rows();
    let out = matmul_f32(&a.to_f32()?, m, b)?;
    Tensor::from_f32(vec![m, b.rows()], &out)
}

/// RMS normalisation of each row of `x` (row length = `weight.len()`).
pub fn rms_norm_in_place(x: &mut [f32], weight: &[f32], eps: f32) -> Result<()> {
    let h = weight.len();
    if h == 0 || x.len() % h != 0 {
        return Err(Error::shape(format!(
            "rms_norm: rows of {} do not divide input of {}",
            h,
            x.len()
        )));
    }
    for row in x.chunks_mut(h) {
        let mut ss = 0f32;
        for v in row.iter() {
            ss += v * v;
        }
        let scale = 1.0 / (ss / h as f32 + eps).sqrt();
        for (v, w) in row.iter_mut().zip(weight) {
            *v = *v * scale * w;
        }
    }
    Ok(())
}

pub fn rms_norm(x: &Tensor, weight: &Tensor, eps: f32) -> Result<Tensor> {
    if weight.shape().len() != 1 || x.cols() != weight.numel() {
        return Err(Error::shape(format!(
            "rms_norm: input {:?} against weight {:?}",
            x.shape(),
            weight.shape()
        )));
    }
    let mut v = x.to_f32_vec()?;
    rms_norm_in_place(&mut v, &weight.to_f32()?, eps)?;
    Tensor::from_f32(x.shape().to_vec(), &v)
}

/// Numerically stable softmax of a single row. Rows that are entirely
/// `-inf` become all zeros.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if max == f32::NEG_INFINITY {
        row.fill(0.0);
        return;
    }
    let mut sum = 0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let mut v = x.to_f32_vec()?;
    for row in v.chunks_mut(x.cols()) {
        softmax_in_place(row);
    }
    Tensor::from_f32(x.shape().to_vec(), &v)
}

#[inline]
pub fn silu_scalar(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    if x.dtype() != DType::F32 {
        return Err(Error::shape(format!("silu expects F32, got {}", x.dtype())));
    }
    let v: Vec<f32> = x.to_f32()?.iter().map(|&v| silu_scalar(v)).collect();
    Tensor::from_f32(x.shape().to_vec(), &v)
}

/// Rotary embedding parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeParams {
    theta: f32,
    head_size: usize,
    inv_freq: Vec<f64>,
}

impl RopeParams {
    pub fn new(theta: f32, head_size: usize) -> Result<Self> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(Error::Config(format!("RoPE theta must be positive, got {theta}")));
        }
        if head_size == 0 || head_size % 2 != 0 {
            return Err(Error::Config(format!("RoPE head size must be even, got {head_size}")));
        }
        let half = head_size / 2;
        let inv_freq = (0..half)
            .map(|i| (theta as f64).powf(-2.0 * i as f64 / head_size as f64))
            .collect();
        Ok(Self { theta, head_size, inv_freq })
    }

    pub fn theta(&self) -> f32 {
        self.theta
    }

    pub fn head_size(&self) -> usize {
        self.head_size
    }

    /// Rotates one head vector in place for absolute `position`, pairing
    /// dimension `i` with `i + head_size/2`.
    pub fn rotate(&self, head: &mut [f32], position: usize) {
        let half = self.head_size / 2;
        if position == 0 {
            return;
        }
        for (i, &f) in self.inv_freq.iter().enumerate() {
            let (sin, cos) = (position as f64 * f).sin_cos();
            let (sin, cos) = (sin as f32, cos as f32);
            let (a, b) = (head[i], head[i + half]);
            head[i] = a * cos - b * sin;
            head[i + half] = a * sin + b * cos;
        }
    }

    /// Rotates every head of a `[n_heads * head_size]` row.
    pub fn rotate_heads(&self, row: &mut [f32], position: usize) {
        for head in row.chunks_mut(self.head_size) {
            self.rotate(head, position);
        }
    }
}

/// Applies RoPE to `x` of shape `[heads, seq, head_size]`.
pub fn rope_apply(x: &Tensor, positions: &[usize], params: &RopeParams) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::shape(format!("rope_apply expects [heads, seq, head_size], got {shape:?}")));
    }
    let (seq, hs) = (shape[1], shape[2]);
    if hs != params.head_size {
        return Err(Error::Config(format!(
            "rope_apply: head size {hs} does not match parameters ({})",
            params.head_size
        )));
    }
    if positions.len() != seq {
        return Err(Error::shape(format!("{} positions for sequence of {seq}", positions.len())));
    }
    let mut v = x.to_f32_vec()?;
    for head in v.chunks_mut(seq * hs) {
        for (row, &pos) in head.chunks_mut(hs).zip(positions) {
            params.rotate(row, pos);
        }
    }
    Tensor::from_f32(shape.to_vec(), &v)
}
