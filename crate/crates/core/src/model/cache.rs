use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Keys and values of one layer, laid out `[kv_head][position][dim]`.
#[derive(Debug, Clone)]
pub struct LayerKv {
    pub(crate) k: Vec<f32>,
    pub(crate) v: Vec<f32>,
}

/// Per-session key/value cache for incremental decoding.
///
/// Linear, not a ring buffer: once `capacity` tokens are cached, further
/// appends fail with a capacity error.
#[derive(Debug, Clone)]
pub struct KvCache {
    pub(crate) layers: Vec<LayerKv>,
    n_kv_heads: usize,
    head_size: usize,
    capacity: usize,
    len: usize,
}

impl KvCache {
    pub fn new(config: &ModelConfig, capacity: usize) -> Result<Self> {
        if capacity == 0 || capacity > config.max_context {
            return Err(Error::Config(format!(
                "cache capacity {capacity} must be in 1..={}",
                config.max_context
            )));
        }
        let per_layer = config.n_kv_heads * capacity * config.head_size;
        Ok(Self {
            layers: (0..config.n_layers)
                .map(|_| LayerKv { k: vec![0.0; per_layer], v: vec![0.0; per_layer] })
                .collect(),
            n_kv_heads: config.n_kv_heads,
            head_size: config.head_size,
            capacity,
            len: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn remaining(&self) -> usize {
        self.capacity - self.len
    }

    pub fn clear(&mut self) {
        self.len = 0;
    }

    /// Forgets positions `len..`; earlier entries stay untouched.
    pub fn truncate(&mut self, len: usize) {
        self.len = self.len.min(len);
    }

    pub(crate) fn check_room(&self, n: usize) -> Result<()> {
        if self.len + n > self.capacity {
            return Err(Error::Capacity { needed: self.len + n, capacity: self.capacity });
        }
        Ok(())
    }

    pub(crate) fn advance(&mut self, n: usize) {
        self.len += n;
    }

    pub(crate) fn index(&self, head: usize, pos: usize) -> usize {
        (head * self.capacity + pos) * self.head_size
    }

    pub fn n_kv_heads(&self) -> usize {
        self.n_kv_heads
    }

    pub fn head_size(&self) -> usize {
        self.head_size
    }

    /// Bytes held by the cache buffers.
    pub fn memory_bytes(&self) -> usize {
        self.layers.len() * 2 * self.n_kv_heads * self.capacity * self.head_size * 4
    }
}
