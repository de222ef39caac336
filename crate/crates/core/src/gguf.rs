//! GGUF v3 container reader and writer.
//!
//! Layout: magic `GGUF`, u32 version, u64 tensor count, u64 metadata count,
//! typed key/value pairs, the tensor directory, zero padding up to the
//! alignment, then the tensor payload. All integers are little-endian.
//!
//! Tensor dimensions are stored innermost first, as in the file. Use
//! [`GgufFile::tensor`] to get an engine [`Tensor`] with row-major shape.

use std::collections::HashSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use bytes::Bytes;
use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::quant::{GgmlType, GGUF_ALIGNMENT};
use crate::tensor::Tensor;

pub const GGUF_MAGIC: [u8; 4] = *b"GGUF";
pub const GGUF_VERSION: u32 = 3;
const MAX_DIMS: usize = 4;
const MAX_ARRAY_NESTING: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueType {
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
    F32,
    Bool,
    String,
    Array,
    U64,
    I64,
    F64,
}

impl ValueType {
    pub fn from_id(id: u32) -> Option<Self> {
        use ValueType::*;
        Some(match id {
            0 => U8,
            1 => I8,
            2 => U16,
            3 => I16,
            4 => U32,
            5 => I32,
            6 => F32,
            7 => Bool,
            8 => String,
            9 => Array,
            10 => U64,
            11 => I64,
            12 => F64,
            _ => return None,
        })
    }

    pub fn id(self) -> u32 {
        use ValueType::*;
        match self {
            U8 => 0,
            I8 => 1,
            U16 => 2,
            I16 => 3,
            U32 => 4,
            I32 => 5,
            F32 => 6,
            Bool => 7,
            String => 8,
            Array => 9,
            U64 => 10,
            I64 => 11,
            F64 => 12,
        }
    }

    /// Smallest encoded size of one value of this type.
    fn min_size(self) -> usize {
        use ValueType::*;
        match self {
            U8 | I8 | Bool => 1,
            U16 | I16 => 2,
            U32 | I32 | F32 => 4,
            U64 | I64 | F64 | String => 8,
            Array => 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetadataValue {
    U8(u8),
    I8(i8),
    U16(u16),
    I16(i16),
    U32(u32),
    I32(i32),
    F32(f32),
    Bool(bool),
    String(String),
    Array(MetadataArray),
    U64(u64),
    I64(i64),
    F64(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetadataArray {
    pub elem_type: ValueType,
    pub values: Vec<MetadataValue>,
}

impl MetadataValue {
    pub fn value_type(&self) -> ValueType {
        match self {
            Self::U8(_) => ValueType::U8,
            Self::I8(_) => ValueType::I8,
            Self::U16(_) => ValueType::U16,
            Self::I16(_) => ValueType::I16,
            Self::U32(_) => ValueType::U32,
            Self::I32(_) => ValueType::I32,
            Self::F32(_) => ValueType::F32,
            Self::Bool(_) => ValueType::Bool,
            Self::String(_) => ValueType::String,
            Self::Array(_) => ValueType::Array,
            Self::U64(_) => ValueType::U64,
            Self::I64(_) => ValueType::I64,
            Self::F64(_) => ValueType::F64,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match *self {
            Self::U8(v) => Some(v as u64),
            Self::U16(v) => Some(v as u64),
            Self::U32(v) => Some(v as u64),
            Self::U64(v) => Some(v),
            Self::I8(v) => u64::try_from(v).ok(),
            Self::I16(v) => u64::try_from(v).ok(),
            Self::I32(v) => u64::try_from(v).ok(),
            Self::I64(v) => u64::try_from(v).ok(),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Self::I8(v) => Some(v as i64),
            Self::I16(v) => Some(v as i64),
            Self::I32(v) => Some(v as i64),
            Self::I64(v) => Some(v),
            _ => self.as_u64().and_then(|v| i64::try_from(v).ok()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Self::F32(v) => Some(v as f64),
            Self::F64(v) => Some(v),
            _ => self.as_i64().map(|v| v as f64),
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Self::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Self::Bool(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&MetadataArray> {
        match self {
            Self::Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn string_array(values: impl IntoIterator<Item = String>) -> Self {
        Self::Array(MetadataArray {
            elem_type: ValueType::String,
            values: values.into_iter().map(Self::String).collect(),
        })
    }

    pub fn f32_array(values: impl IntoIterator<Item = f32>) -> Self {
        Self::Array(MetadataArray {
            elem_type: ValueType::F32,
            values: values.into_iter().map(Self::F32).collect(),
        })
    }

    pub fn i32_array(values: impl IntoIterator<Item = i32>) -> Self {
        Self::Array(MetadataArray {
            elem_type: ValueType::I32,
            values: values.into_iter().map(Self::I32).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorInfo {
    pub name: String,
    /// Dimensions, innermost first.
    pub dims: Vec<u64>,
    pub ggml_type: GgmlType,
    /// Offset from the start of the payload.
    pub offset: u64,
}

impl TensorInfo {
    pub fn n_elements(&self) -> u64 {
        self.dims.iter().product()
    }

    pub fn byte_size(&self) -> Result<u64> {
        let n = self
            .dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor {:?}: element count overflows", self.name)))?;
        let inner = *self.dims.first().unwrap_or(&1);
        let (bs, _) = self.ggml_type.layout();
        if inner % bs as u64 != 0 {
            return Err(Error::Format(format!(
                "tensor {:?}: innermost dimension {inner} not divisible by {} block size {bs}",
                self.name, self.ggml_type
            )));
        }
        self.ggml_type
            .bytes_for(n)
            .ok_or_else(|| Error::Format(format!("tensor {:?}: size overflows", self.name)))
    }

    /// Row-major shape (outermost first).
    pub fn shape(&self) -> Vec<usize> {
        self.dims.iter().rev().map(|&d| d as usize).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GgufFile {
    pub version: u32,
    pub metadata: IndexMap<String, MetadataValue>,
    pub tensors: Vec<TensorInfo>,
    /// Tensor payload region.
    pub data: Bytes,
}

impl GgufFile {
    pub fn alignment(&self) -> u64 {
        alignment_of(&self.metadata)
    }

    pub fn get(&self, key: &str) -> Option<&MetadataValue> {
        self.metadata.get(key)
    }

    pub fn tensor_info(&self, name: &str) -> Option<&TensorInfo> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Raw payload bytes of a tensor, without copying.
    pub fn tensor_data(&self, info: &TensorInfo) -> Result<Bytes> {
        let size = info.byte_size()?;
        let end = info
            .offset
            .checked_add(size)
            .filter(|&e| e <= self.data.len() as u64)
            .ok_or_else(|| Error::Corrupt {
                section: "tensor data",
                offset: info.offset,
                detail: format!("tensor {:?} extends past the payload", info.name),
            })?;
        Ok(self.data.slice(info.offset as usize..end as usize))
    }

    /// Loads a tensor as an engine [`Tensor`].
    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let info = self
            .tensor_info(name)
            .ok_or_else(|| Error::Schema(format!("missing tensor {name:?}")))?;
        let dtype = info.ggml_type.dtype().ok_or_else(|| {
            Error::Unsupported(format!(
                "tensor {name:?} uses {} which this engine cannot decode (supported: F32, F16, Q8_0, Q4_0); \
                 re-quantize the model to Q8_0 or Q4_0",
                info.ggml_type
            ))
        })?;
        Tensor::new(info.shape(), dtype, self.tensor_data(info)?)
    }

    fn validate(&self) -> Result<()> {
        if self.version != GGUF_VERSION {
            return Err(Error::Version(self.version));
        }
        let align = self.alignment();
        if align == 0 || !align.is_power_of_two() {
            return Err(Error::Validation(format!("alignment {align} is not a power of two")));
        }
        let mut names = HashSet::new();
        let mut regions = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Validation(format!("duplicate tensor name {:?}", t.name)));
            }
            if t.dims.is_empty() || t.dims.len() > MAX_DIMS || t.dims.contains(&0) {
                return Err(Error::Validation(format!("tensor {:?} has invalid dims {:?}", t.name, t.dims)));
            }
            if t.offset % align != 0 {
                return Err(Error::Validation(format!(
                    "tensor {:?} offset {} is not aligned to {align}",
                    t.name, t.offset
                )));
            }
            let size = t.byte_size()?;
            match t.offset.checked_add(size) {
                Some(end) if end <= self.data.len() as u64 => regions.push((t.offset, end, &t.name)),
                _ => {
                    return Err(Error::Validation(format!(
                        "tensor {:?} (offset {}, {size} bytes) exceeds payload of {}",
                        t.name,
                        t.offset,
                        self.data.len()
                    )))
                }
            }
        }
        regions.sort();
        for w in regions.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::Validation(format!("tensors {:?} and {:?} overlap", w[0].2, w[1].2)));
            }
        }
        Ok(())
    }

    /// Serialized header length (everything before the payload, including
    /// alignment padding).
    pub fn header_len(&self) -> u64 {
        let mut n = 4 + 4 + 8 + 8;
        for (k, v) in &self.metadata {
            n += 8 + k.len() as u64 + 4 + value_len(v);
        }
        for t in &self.tensors {
            n += 8 + t.name.len() as u64 + 4 + 8 * t.dims.len() as u64 + 4 + 8;
        }
        n.next_multiple_of(self.alignment())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.header_len() as usize + self.data.len());
        out.extend_from_slice(&GGUF_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u64).to_le_bytes());
        for (k, v) in &self.metadata {
            write_string(&mut out, k);
            out.extend_from_slice(&v.value_type().id().to_le_bytes());
            write_value(&mut out, v)?;
        }
        for t in &self.tensors {
            write_string(&mut out, &t.name);
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&t.ggml_type.id().to_le_bytes());
            out.extend_from_slice(&t.offset.to_le_bytes());
        }
        let padded = (out.len() as u64).next_multiple_of(self.alignment()) as usize;
        out.resize(padded, 0);
        out.extend_from_slice(&self.data);
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_gguf(self, path)
    }
}

fn alignment_of(metadata: &IndexMap<String, MetadataValue>) -> u64 {
    metadata
        .get("general.alignment")
        .and_then(MetadataValue::as_u64)
        .unwrap_or(GGUF_ALIGNMENT)
}

fn value_len(v: &MetadataValue) -> u64 {
    match v {
        MetadataValue::String(s) => 8 + s.len() as u64,
        MetadataValue::Array(a) => 4 + 8 + a.values.iter().map(value_len).sum::<u64>(),
        other => other.value_type().min_size() as u64,
    }
}

fn write_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn write_value(out: &mut Vec<u8>, v: &MetadataValue) -> Result<()> {
    match v {
        MetadataValue::U8(x) => out.push(*x),
        MetadataValue::I8(x) => out.push(*x as u8),
        MetadataValue::U16(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetadataValue::I16(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetadataValue::U32(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetadataValue::I32(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetadataValue::F32(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetadataValue::Bool(x) => out.push(*x as u8),
        MetadataValue::String(s) => write_string(out, s),
        MetadataValue::U64(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetadataValue::I64(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetadataValue::F64(x) => out.extend_from_slice(&x.to_le_bytes()),
        MetadataValue::Array(a) => {
            out.extend_from_slice(&a.elem_type.id().to_le_bytes());
            out.extend_from_slice(&(a.values.len() as u64).to_le_bytes());
            for e in &a.values {
                if e.value_type() != a.elem_type {
                    return Err(Error::Validation(format!(
                        "array of {:?} holds a {:?} element",
                        a.elem_type,
                        e.value_type()
                    )));
                }
                write_value(out, e)?;
            }
        }
    }
    Ok(())
}

pub fn write_gguf(file: &GgufFile, path: impl AsRef<Path>) -> Result<()> {
    let bytes = file.to_bytes()?;
    let mut f = File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

/// Memory-maps and parses a GGUF file.
pub fn read_gguf(path: impl AsRef<Path>) -> Result<GgufFile> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    if len == 0 {
        return parse_gguf(Bytes::new());
    }
    // SAFETY: the mapping is read-only; callers must not truncate the file
    // while it is mapped.
    let map = unsafe { memmap2::Mmap::map(&file)? };
    parse_gguf(Bytes::from_owner(map))
}

/// Parses a GGUF image held in memory. Tensor data aliases `buf`.
pub fn parse_gguf(buf: Bytes) -> Result<GgufFile> {
    let mut r = Reader { buf: &buf, pos: 0, section: "header" };
    let magic = r.take(4)?;
    if magic != GGUF_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?} (expected \"GGUF\")",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32()?;
    if version != GGUF_VERSION {
        return Err(Error::Version(version));
    }
    let n_tensors = r.u64()?;
    let n_kv = r.u64()?;

    r.section = "metadata";
    r.check_count(n_kv, 8 + 4)?;
    let mut metadata = IndexMap::new();
    for _ in 0..n_kv {
        let at = r.pos;
        let key = r.string()?;
        let ty = r.value_type()?;
        let value = r.value(ty, 0)?;
        if metadata.insert(key.clone(), value).is_some() {
            return Err(r.corrupt_at(at, format!("duplicate metadata key {key:?}")));
        }
    }

    r.section = "tensor directory";
    r.check_count(n_tensors, 8 + 4 + 4 + 8)?;
    let mut tensors = Vec::new();
    for _ in 0..n_tensors {
        let name = r.string()?;
        let n_dims = r.u32()? as usize;
        if n_dims == 0 || n_dims > MAX_DIMS {
            return Err(r.corrupt(format!("tensor {name:?} has {n_dims} dimensions")));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            dims.push(r.u64()?);
        }
        let type_at = r.pos;
        let type_id = r.u32()?;
        let ggml_type = GgmlType::from_id(type_id).ok_or_else(|| {
            r.format_at(type_at, format!("tensor {name:?} has unknown ggml type {type_id}"))
        })?;
        let offset = r.u64()?;
        tensors.push(TensorInfo { name, dims, ggml_type, offset });
    }

    r.section = "alignment padding";
    let align = alignment_of(&metadata);
    if align == 0 || !align.is_power_of_two() {
        return Err(Error::Format(format!("general.alignment {align} is not a power of two")));
    }
    let start = (r.pos as u64).next_multiple_of(align);
    if start > buf.len() as u64 {
        return Err(r.corrupt("file ends inside the alignment padding".into()));
    }
    let file = GgufFile {
        version,
        metadata,
        tensors,
        data: buf.slice(start as usize..),
    };
    file.validate().map_err(|e| match e {
        Error::Validation(detail) | Error::Format(detail) => Error::Corrupt {
            section: "tensor data",
            offset: start,
            detail,
        },
        other => other,
    })?;
    Ok(file)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, detail: String) -> Error {
        self.corrupt_at(self.pos, detail)
    }

    fn corrupt_at(&self, at: usize, detail: String) -> Error {
        Error::Corrupt { section: self.section, offset: at as u64, detail }
    }

    fn format_at(&self, at: usize, detail: String) -> Error {
        Error::Format(format!("{detail} ({} at byte offset {at})", self.section))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.corrupt(format!(
                "truncated: need {n} bytes, {} remain",
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    /// Rejects element counts that cannot fit in the remaining bytes.
    fn check_count(&self, count: u64, min_size: usize) -> Result<()> {
        match count.checked_mul(min_size as u64) {
            Some(n) if n <= self.remaining() as u64 => Ok(()),
            _ => Err(self.corrupt(format!(
                "count {count} cannot fit in the {} remaining bytes",
                self.remaining()
            ))),
        }
    }

    fn string(&mut self) -> Result<String> {
        let at = self.pos;
        let len = self.u64()?;
        if len > self.remaining() as u64 {
            return Err(self.corrupt_at(at, format!("string of {len} bytes exceeds file")));
        }
        let bytes = self.take(len as usize)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.format_at(at, "string is not valid UTF-8".into()))
    }

    fn value_type(&mut self) -> Result<ValueType> {
        let at = self.pos;
        let id = self.u32()?;
        ValueType::from_id(id).ok_or_else(|| self.format_at(at, format!("unknown metadata value type {id}")))
    }

    fn value(&mut self, ty: ValueType, depth: usize) -> Result<MetadataValue> {
        Ok(match ty {
            ValueType::U8 => MetadataValue::U8(self.array::<1>()?[0]),
            ValueType::I8 => MetadataValue::I8(self.array::<1>()?[0] as i8),
            ValueType::U16 => MetadataValue::U16(u16::from_le_bytes(self.array()?)),
            ValueType::I16 => MetadataValue::I16(i16::from_le_bytes(self.array()?)),
            ValueType::U32 => MetadataValue::U32(self.u32()?),
            ValueType::I32 => MetadataValue::I32(i32::from_le_bytes(self.array()?)),
            ValueType::F32 => MetadataValue::F32(f32::from_le_bytes(self.array()?)),
            ValueType::Bool => {
                let at = self.pos;
                match self.array::<1>()?[0] {
                    0 => MetadataValue::Bool(false),
                    1 => MetadataValue::Bool(true),
                    b => return Err(self.format_at(at, format!("invalid bool byte {b}"))),
                }
            }
            ValueType::String => MetadataValue::String(self.string()?),
            ValueType::U64 => MetadataValue::U64(self.u64()?),
            ValueType::I64 => MetadataValue::I64(i64::from_le_bytes(self.array()?)),
            ValueType::F64 => MetadataValue::F64(f64::from_le_bytes(self.array()?)),
            ValueType::Array => {
                if depth >= MAX_ARRAY_NESTING {
                    return Err(self.corrupt("arrays nested too deeply".into()));
                }
                let elem_type = self.value_type()?;
                let count = self.u64()?;
                self.check_count(count, elem_type.min_size())?;
                let mut values = Vec::with_capacity(count as usize);
                for _ in 0..count {
                    values.push(self.value(elem_type, depth + 1)?);
                }
                MetadataValue::Array(MetadataArray { elem_type, values })
            }
        })
    }
}

/// Assembles a [`GgufFile`], laying tensors out at aligned offsets.
#[derive(Debug, Default)]
pub struct GgufBuilder {
    metadata: IndexMap<String, MetadataValue>,
    tensors: Vec<(String, Vec<u64>, GgmlType, Bytes)>,
}

impl GgufBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_metadata(metadata: IndexMap<String, MetadataValue>) -> Self {
        Self { metadata, tensors: Vec::new() }
    }

    pub fn metadata(&mut self, key: impl Into<String>, value: MetadataValue) -> &mut Self {
        self.metadata.insert(key.into(), value);
        self
    }

    /// Adds raw tensor bytes; `dims` are innermost first.
    pub fn raw_tensor(&mut self, name: impl Into<String>, dims: Vec<u64>, ty: GgmlType, data: impl Into<Bytes>) -> &mut Self {
        self.tensors.push((name.into(), dims, ty, data.into()));
        self
    }

    /// Adds an engine tensor (row-major shape).
    pub fn tensor(&mut self, name: impl Into<String>, t: &Tensor) -> &mut Self {
        let dims = t.shape().iter().rev().map(|&d| d as u64).collect();
        self.raw_tensor(name, dims, t.dtype().into(), t.bytes().clone())
    }

    pub fn build(self) -> Result<GgufFile> {
        let align = alignment_of(&self.metadata);
        if align == 0 || !align.is_power_of_two() {
            return Err(Error::Validation(format!("alignment {align} is not a power of two")));
        }
        let mut payload = Vec::new();
        let mut infos = Vec::with_capacity(self.tensors.len());
        for (name, dims, ggml_type, data) in self.tensors {
            let offset = (payload.len() as u64).next_multiple_of(align);
            payload.resize(offset as usize, 0);
            let info = TensorInfo { name, dims, ggml_type, offset };
            if info.byte_size()? != data.len() as u64 {
                return Err(Error::Validation(format!(
                    "tensor {:?}: {} bytes supplied, {} expected",
                    info.name,
                    data.len(),
                    info.byte_size()?
                )));
            }
            payload.extend_from_slice(&data);
            infos.push(info);
        }
        let file = GgufFile {
            version: GGUF_VERSION,
            metadata: self.metadata,
            tensors: infos,
            data: Bytes::from(payload),
        };
        file.validate()?;
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal file built byte by byte: one 2×2 F32 tensor, no metadata.
    fn minimal_bytes() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"GGUF");
        b.extend_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&1u64.to_le_bytes());
        b.extend_from_slice(&0u64.to_le_bytes());
        b.extend_from_slice(&1u64.to_le_bytes());
        b.push(b't');
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&2u64.to_le_bytes());
        b.extend_from_slice(&2u64.to_le_bytes());
        b.extend_from_slice(&0u32.to_le_bytes());
        b.extend_from_slice(&0u64.to_le_bytes());
        b.resize(96, 0);
        for v in [1f32, 2., 3., 4.] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn parses_minimal_file() {
        let f = parse_gguf(Bytes::from(minimal_bytes())).unwrap();
        assert_eq!(f.version, 3);
        assert!(f.metadata.is_empty());
        assert_eq!(f.tensors.len(), 1);
        let t = &f.tensors[0];
        assert_eq!((t.name.as_str(), t.ggml_type, t.offset), ("t", GgmlType::F32, 0));
        assert_eq!(t.byte_size().unwrap(), 16);
        assert_eq!(f.tensor("t").unwrap().to_f32_vec().unwrap(), vec![1., 2., 3., 4.]);
        assert_eq!(f.to_bytes().unwrap(), minimal_bytes());
    }

    #[test]
    fn bad_magic() {
        let mut b = minimal_bytes();
        b[3] = b'X';
        assert!(matches!(parse_gguf(Bytes::from(b)), Err(Error::Format(_))));
    }

    #[test]
    fn old_version_rejected() {
        let mut b = minimal_bytes();
        b[4] = 2;
        assert!(matches!(parse_gguf(Bytes::from(b)), Err(Error::Version(2))));
    }

    #[test]
    fn unknown_value_type() {
        let mut b = Vec::new();
        b.extend_from_slice(b"GGUF");
        b.extend_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&0u64.to_le_bytes());
        b.extend_from_slice(&1u64.to_le_bytes());
        b.extend_from_slice(&1u64.to_le_bytes());
        b.push(b'k');
        b.extend_from_slice(&13u32.to_le_bytes());
        b.extend_from_slice(&[0; 8]);
        assert!(matches!(parse_gguf(Bytes::from(b)), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_names_section() {
        let mut b = minimal_bytes();
        b.truncate(b.len() - 1);
        match parse_gguf(Bytes::from(b)) {
            Err(Error::Corrupt { section, .. }) => assert_eq!(section, "tensor data"),
            other => panic!("{other:?}"),
        }
        let b = minimal_bytes()[..30].to_vec();
        match parse_gguf(Bytes::from(b)) {
            Err(Error::Corrupt { section, offset, .. }) => {
                assert_eq!(section, "tensor directory");
                assert_eq!(offset, 24);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn huge_counts_do_not_allocate() {
        let mut b = minimal_bytes();
        b[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(parse_gguf(Bytes::from(b)), Err(Error::Corrupt { .. })));
    }

    #[test]
    fn builder_aligns_offsets() {
        let mut g = GgufBuilder::new();
        g.metadata("general.name", MetadataValue::String("x".into()));
        g.raw_tensor("a", vec![3], GgmlType::F32, vec![0u8; 12]);
        g.raw_tensor("b", vec![32], GgmlType::Q8_0, vec![0u8; 34]);
        g.raw_tensor("c", vec![5], GgmlType::F16, vec![0u8; 10]);
        let f = g.build().unwrap();
        for t in &f.tensors {
            assert_eq!(t.offset % 32, 0);
        }
        assert_eq!(f.tensors[1].offset, 32);
        assert_eq!(f.tensors[2].offset, 96);
        let bytes = f.to_bytes().unwrap();
        assert_eq!(bytes.len() as u64, f.header_len() + f.data.len() as u64);
        assert_eq!(parse_gguf(Bytes::from(bytes)).unwrap(), f);
    }

    #[test]
    fn overlapping_tensors_rejected() {
        let mut f = {
            let mut g = GgufBuilder::new();
            g.raw_tensor("a", vec![16], GgmlType::F32, vec![0u8; 64]);
            g.raw_tensor("b", vec![16], GgmlType::F32, vec![0u8; 64]);
            g.build().unwrap()
        };
        f.tensors[1].offset = 32;
        assert!(matches!(f.to_bytes(), Err(Error::Validation(_))));
    }

    #[test]
    fn k_quant_tensor_rejected_on_load() {
        let mut g = GgufBuilder::new();
        g.raw_tensor("w", vec![256, 1], GgmlType::Q4K, vec![0u8; 144]);
        let f = g.build().unwrap();
        let err = f.tensor("w").unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
        assert!(err.to_string().contains("Q4_K"));
    }
}
