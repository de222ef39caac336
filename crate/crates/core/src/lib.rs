//! Inference engine for Danube3-family decoder-only language models.
//!
//! Weights load from GGUF files and run on the CPU in F32, F16, Q8_0 or
//! Q4_0. The crate also carries the tokenizer, sampling, chat templating
//! and perplexity evaluation.

pub mod error;
pub mod eval;
pub mod fixtures;
pub mod generation;
pub mod gguf;
pub mod model;
pub mod ops;
pub mod quant;
pub mod requant;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
pub use generation::{generate, ChatTemplate, FinishReason, Generation, GenerationParams, Role, Session, Turn};
pub use gguf::{parse_gguf, read_gguf, write_gguf, GgufFile};
pub use model::{load_model, KvCache, Model, ModelConfig, DANUBE3_4B, DANUBE3_500M};
pub use quant::{predict_model_size, QuantPolicy, QuantType};
pub use tensor::{DType, Tensor};
pub use tokenizer::Tokenizer;
