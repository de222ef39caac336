//! Dense tensors with an element-type tag.
//!
//! Data is held in a [`Bytes`] buffer so that weights can alias a memory
//! mapped GGUF payload without copying. Shapes are row-major with the
//! innermost dimension last.

use std::borrow::Cow;
use std::fmt;

use bytes::Bytes;
use half::f16;

use crate::error::{Error, Result};
use crate::quant::{self, QK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F16,
    Q8_0,
    Q4_0,
}

impl DType {
    /// Elements per block (1 for scalar types).
    pub const fn block_size(self) -> usize {
        match self {
            DType::F32 | DType::F16 => 1,
            DType::Q8_0 | DType::Q4_0 => QK,
        }
    }

    pub const fn block_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
            DType::Q8_0 => quant::Q8_0_BYTES,
            DType::Q4_0 => quant::Q4_0_BYTES,
        }
    }

    pub const fn is_quantized(self) -> bool {
        matches!(self, DType::Q8_0 | DType::Q4_0)
    }

    /// Byte length of a row of `n` elements.
    pub fn row_bytes(self, n: usize) -> Result<usize> {
        if n % self.block_size() != 0 {
            return Err(Error::Format(format!(
                "{self} row of {n} elements is not a multiple of the block size {}",
                self.block_size()
            )));
        }
        Ok(n / self.block_size() * self.block_bytes())
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "F32",
            DType::F16 => "F16",
            DType::Q8_0 => "Q8_0",
            DType::Q4_0 => "Q4_0",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Bytes,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("dtype", &self.dtype)
            .field("bytes", &self.data.len())
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, dtype: DType, data: impl Into<Bytes>) -> Result<Self> {
        let data = data.into();
        let expected = Self::byte_len(&shape, dtype)?;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "{dtype} tensor of shape {shape:?} needs {expected} bytes, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, dtype, data })
    }

    /// Byte size of a tensor with this shape and dtype.
    pub fn byte_len(shape: &[usize], dtype: DType) -> Result<usize> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("invalid shape {shape:?}")));
        }
        let inner = *shape.last().unwrap();
        let outer = shape[..shape.len() - 1]
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::shape(format!("shape {shape:?} overflows")))?;
        dtype
            .row_bytes(inner)?
            .checked_mul(outer)
            .ok_or_else(|| Error::shape(format!("shape {shape:?} overflows")))
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Result<Self> {
        let mut buf = Vec::with_capacity(values.len() * 4);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        Self::new(shape, DType::F32, buf)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = Self::byte_len(&shape, DType::F32)?;
        Self::new(shape, DType::F32, vec![0u8; len])
    }

    /// Encodes F32 values into `dtype`, row by row.
    pub fn quantize(shape: Vec<usize>, values: &[f32], dtype: DType) -> Result<Self> {
        let inner = *shape
            .last()
            .ok_or_else(|| Error::shape("empty shape"))?;
        if values.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "{} values do not fill shape {shape:?}",
                values.len()
            )));
        }
        let mut buf = Vec::with_capacity(Self::byte_len(&shape, dtype)?);
        for row in values.chunks(inner) {
            quant::encode_row(row, dtype, &mut buf)?;
        }
        Self::new(shape, dtype, buf)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn bytes(&self) -> &Bytes {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Number of rows when viewed as a 2-D matrix `[outer, inner]`.
    pub fn rows(&self) -> usize {
        self.numel() / self.cols()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn row_bytes(&self, row: usize) -> &[u8] {
        let stride = self.data.len() / self.rows();
        &self.data[row * stride..(row + 1) * stride]
    }

    /// Dequantizes a single row into `out`.
    pub fn dequantize_row_into(&self, row: usize, out: &mut [f32]) -> Result<()> {
        quant::dequantize_row(self.row_bytes(row), self.dtype, out)
    }

    /// All elements as F32; borrows when the buffer is already aligned F32.
    pub fn to_f32(&self) -> Result<Cow<'_, [f32]>> {
        if self.dtype == DType::F32 {
            if let Some(v) = cast_f32(&self.data) {
                return Ok(Cow::Borrowed(v));
            }
        }
        let mut out = vec![0f32; self.numel()];
        quant::dequantize_row(&self.data, self.dtype, &mut out)?;
        Ok(Cow::Owned(out))
    }

    pub fn to_f32_vec(&self) -> Result<Vec<f32>> {
        Ok(self.to_f32()?.into_owned())
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.dtype, self.data.clone())
    }
}

/// Reinterprets little-endian bytes as `f32` when aligned.
pub(crate) fn cast_f32(bytes: &[u8]) -> Option<&[f32]> {
    if !cfg!(target_endian = "little") || bytes.len() % 4 != 0 {
        return None;
    }
    // SAFETY: every bit pattern is a valid f32 and align_to only yields a
    // middle slice for correctly aligned addresses.
    let (head, body, tail) = unsafe { bytes.align_to::<f32>() };
    if head.is_empty() && tail.is_empty() {
        Some(body)
    } else {
        None
    }
}

pub(crate) fn f16_bits(bytes: [u8; 2]) -> f32 {
    f16::from_le_bytes(bytes).to_f32()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_length_invariant() {
        assert_eq!(Tensor::byte_len(&[2, 64], DType::Q8_0).unwrap(), 2 * 2 * 34);
        assert_eq!(Tensor::byte_len(&[3, 32], DType::Q4_0).unwrap(), 3 * 18);
        assert_eq!(Tensor::byte_len(&[5], DType::F16).unwrap(), 10);
        assert!(Tensor::byte_len(&[2, 33], DType::Q8_0).is_err());
        assert!(Tensor::byte_len(&[0, 4], DType::F32).is_err());
        assert!(Tensor::byte_len(&[], DType::F32).is_err());
    }

    #[test]
    fn wrong_buffer_length_rejected() {
        assert!(Tensor::new(vec![2, 2], DType::F32, vec![0u8; 15]).is_err());
    }

    #[test]
    fn f32_roundtrip() {
        let t = Tensor::from_f32(vec![2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(t.rows(), 2);
        assert_eq!(t.to_f32_vec().unwrap(), vec![1., 2., 3., 4., 5., 6.]);
    }
}
