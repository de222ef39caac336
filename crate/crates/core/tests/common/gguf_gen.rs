//! Generators for property-based GGUF tests.

use danube_core::fixtures;
use danube_core::gguf::{GgufBuilder, GgufFile, MetadataArray, MetadataValue, ValueType};
use danube_core::quant::GgmlType;
use danube_core::DType;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scalar(ty: ValueType) -> BoxedStrategy<MetadataValue> {
    match ty {
        ValueType::U8 => any::<u8>().prop_map(MetadataValue::U8).boxed(),
        ValueType::I8 => any::<i8>().prop_map(MetadataValue::I8).boxed(),
        ValueType::U16 => any::<u16>().prop_map(MetadataValue::U16).boxed(),
        ValueType::I16 => any::<i16>().prop_map(MetadataValue::I16).boxed(),
        ValueType::U32 => any::<u32>().prop_map(MetadataValue::U32).boxed(),
        ValueType::I32 => any::<i32>().prop_map(MetadataValue::I32).boxed(),
        ValueType::U64 => any::<u64>().prop_map(MetadataValue::U64).boxed(),
        ValueType::I64 => any::<i64>().prop_map(MetadataValue::I64).boxed(),
        ValueType::F32 => any::<f32>().prop_map(MetadataValue::F32).boxed(),
        ValueType::F64 => any::<f64>().prop_map(MetadataValue::F64).boxed(),
        ValueType::Bool => any::<bool>().prop_map(MetadataValue::Bool).boxed(),
        ValueType::String => ".{0,12}".prop_map(MetadataValue::String).boxed(),
        ValueType::Array => unreachable!(),
    }
}

pub const SCALARS: [ValueType; 12] = [
    ValueType::U8,
    ValueType::I8,
    ValueType::U16,
    ValueType::I16,
    ValueType::U32,
    ValueType::I32,
    ValueType::U64,
    ValueType::I64,
    ValueType::F32,
    ValueType::F64,
    ValueType::Bool,
    ValueType::String,
];

pub fn value() -> impl Strategy<Value = MetadataValue> {
    let leaf = prop::sample::select(SCALARS.to_vec()).prop_flat_map(scalar);
    let array_of = |elem: BoxedStrategy<MetadataValue>, ty: Option<ValueType>| {
        prop::collection::vec(elem, 0..5).prop_map(move |values| {
            let elem_type = ty.or_else(|| values.first().map(|v| v.value_type())).unwrap_or(ValueType::Array);
            MetadataValue::Array(MetadataArray { elem_type, values })
        })
    };
    let flat = prop::sample::select(SCALARS.to_vec())
        .prop_flat_map(move |ty| array_of(scalar(ty), Some(ty)));
    let nested = prop::sample::select(SCALARS.to_vec()).prop_flat_map(move |ty| {
        prop::collection::vec(array_of(scalar(ty), Some(ty)), 0..3).prop_map(|values| {
            MetadataValue::Array(MetadataArray { elem_type: ValueType::Array, values })
        })
    });
    prop_oneof![4 => leaf, 2 => flat, 1 => nested]
}

#[derive(Debug, Clone)]
pub struct TensorPlan {
    pub name: String,
    pub dims: Vec<u64>,
    pub ty: GgmlType,
    pub seed: u64,
}

pub fn tensor_plan() -> impl Strategy<Value = TensorPlan> {
    (
        "[a-z.]{1,10}",
        prop::sample::select(vec![GgmlType::F32, GgmlType::F16, GgmlType::Q8_0, GgmlType::Q4_0]),
        1u64..4,
        prop::collection::vec(1u64..5, 0..3),
        any::<u64>(),
    )
        .prop_map(|(name, ty, blocks, rest, seed)| {
            let ne0 = if matches!(ty, GgmlType::F32 | GgmlType::F16) { blocks * 3 } else { blocks * 32 };
            let mut dims = vec![ne0];
            dims.extend(rest);
            TensorPlan { name, dims, ty, seed }
        })
}

pub fn build(meta: Vec<(String, MetadataValue)>, tensors: Vec<TensorPlan>, alignment: Option<u32>) -> GgufFile {
    let mut b = GgufBuilder::new();
    if let Some(a) = alignment {
        b.metadata("general.alignment", MetadataValue::U32(a));
    }
    for (k, v) in meta {
        if k != "general.alignment" {
            b.metadata(k, v);
        }
    }
    let mut seen = std::collections::HashSet::new();
    for (i, t) in tensors.into_iter().enumerate() {
        let name = if seen.insert(t.name.clone()) { t.name } else { format!("{}#{i}", t.name) };
        let n: u64 = t.dims.iter().product();
        let size = t.ty.bytes_for(n).unwrap() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
        let data: Vec<u8> = (0..size).map(|_| rng.gen()).collect();
        b.raw_tensor(name, t.dims, t.ty, data);
    }
    b.build().unwrap()
}

/// A small but complete model file.
pub fn sample_file() -> Vec<u8> {
    let cfg = fixtures::tiny_config(fixtures::tokenizer().vocab_size());
    let cfg = danube_core::ModelConfig { n_layers: 1, ..cfg };
    fixtures::tiny_gguf(cfg, 5, DType::Q8_0).to_bytes().unwrap()
}
