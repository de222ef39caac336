use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use danube_core::generation::{resolve_template, ChatTemplate};
use danube_core::gguf::MetadataValue;
use danube_core::{load_model, read_gguf, KvCache, Model, Result, Tokenizer};
use tokio::sync::Semaphore;

/// A model ready to serve.
pub struct LoadedModel {
    pub name: String,
    pub model: Model,
    pub tokenizer: Tokenizer,
    pub template: ChatTemplate,
    pub quantization: String,
}

impl LoadedModel {
    /// Loads a GGUF checkpoint. `chat_template` is used only when the file
    /// carries none.
    pub fn load(path: &Path, chat_template: Option<&str>) -> Result<Self> {
        let g = read_gguf(path)?;
        let (model, tokenizer) = load_model(&g)?;
        let user = chat_template.map(ChatTemplate::user).transpose()?;
        let template = resolve_template(ChatTemplate::from_gguf(&g)?, user)?;
        let name = g
            .get("general.name")
            .and_then(MetadataValue::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
        let quantization = model.weight_dtype().name().to_string();
        Ok(Self { name, model, tokenizer, template, quantization })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Limits {
    /// KV cache length per session.
    pub ctx: usize,
    pub workers: usize,
    pub queue: usize,
}

/// Cached state of one worker slot between requests.
struct Slot {
    cache: Option<KvCache>,
    tokens: Vec<u32>,
    last_used: u64,
}

/// Fixed set of KV caches, one per worker. A request takes the idle slot
/// sharing the longest prefix with its prompt so earlier turns of a
/// conversation are not recomputed.
pub struct SessionRegistry {
    slots: Vec<Slot>,
    clock: u64,
}

/// A checked-out slot.
pub struct Lease {
    pub index: usize,
    pub cache: KvCache,
    pub cached: Vec<u32>,
}

impl SessionRegistry {
    pub fn new(capacity: usize) -> Self {
        Self {
            slots: (0..capacity).map(|_| Slot { cache: None, tokens: Vec::new(), last_used: 0 }).collect(),
            clock: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    /// Sessions currently owned by a request.
    pub fn active(&self) -> usize {
        self.slots.iter().filter(|s| s.last_used == u64::MAX).count()
    }

    /// Takes an idle slot; `None` if all are in use.
    pub fn checkout(&mut self, model: &Model, ctx: usize, prompt: &[u32]) -> Result<Option<Lease>> {
        let best = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.last_used != u64::MAX)
            .max_by_key(|(_, s)| {
                let common = s.tokens.iter().zip(prompt).take_while(|(a, b)| a == b).count();
                (common, std::cmp::Reverse(s.last_used))
            })
            .map(|(i, _)| i);
        let Some(index) = best else { return Ok(None) };
        let slot = &mut self.slots[index];
        let cache = match slot.cache.take() {
            Some(c) => c,
            None => model.new_cache(ctx)?,
        };
        slot.last_used = u64::MAX;
        Ok(Some(Lease { index, cache, cached: std::mem::take(&mut slot.tokens) }))
    }

    /// Returns a slot. `tokens` are the ids whose keys and values the cache
    /// now holds.
    pub fn checkin(&mut self, index: usize, cache: KvCache, tokens: Vec<u32>) {
        self.clock += 1;
        let slot = &mut self.slots[index];
        slot.cache = Some(cache);
        slot.tokens = tokens;
        slot.last_used = self.clock;
    }

    /// Returns a slot whose cache contents are unknown.
    pub fn discard(&mut self, index: usize, mut cache: KvCache) {
        cache.clear();
        self.checkin(index, cache, Vec::new());
    }
}

pub struct AppState {
    pub model: Option<Arc<LoadedModel>>,
    pub limits: Limits,
    pub started: Instant,
    pub(crate) workers: Arc<Semaphore>,
    /// Requests admitted (running or queued).
    pub(crate) admitted: AtomicUsize,
    pub(crate) registry: Mutex<SessionRegistry>,
    pub(crate) next_id: AtomicU64,
}

impl AppState {
    pub fn new(model: Option<LoadedModel>, limits: Limits) -> Arc<Self> {
        let workers = limits.workers.max(1);
        Arc::new(Self {
            model: model.map(Arc::new),
            limits: Limits { workers, ..limits },
            started: Instant::now(),
            workers: Arc::new(Semaphore::new(workers)),
            admitted: AtomicUsize::new(0),
            registry: Mutex::new(SessionRegistry::new(workers)),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn active_sessions(&self) -> usize {
        self.registry.lock().unwrap().active()
    }

    /// Admitted requests still waiting for a worker.
    pub fn queued(&self) -> usize {
        let running = self.limits.workers - self.workers.available_permits();
        self.admitted.load(Ordering::SeqCst).saturating_sub(running)
    }
}

/// Releases an admission when dropped.
pub(crate) struct Admission(pub Arc<AppState>);

impl Admission {
    pub fn try_new(state: &Arc<AppState>) -> Option<Self> {
        let cap = state.limits.workers + state.limits.queue;
        let prev = state.admitted.fetch_add(1, Ordering::SeqCst);
        if prev >= cap {
            state.admitted.fetch_sub(1, Ordering::SeqCst);
            return None;
        }
        Some(Self(state.clone()))
    }
}

impl Drop for Admission {
    fn drop(&mut self) {
        self.0.admitted.fetch_sub(1, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use danube_core::fixtures;

    #[test]
    fn registry_prefers_longest_prefix() {
        let (model, _) = fixtures::tiny_model(fixtures::tiny_config(fixtures::tokenizer().vocab_size()), 1, danube_core::DType::F32);
        let mut r = SessionRegistry::new(2);
        let a = r.checkout(&model, 16, &[1, 2, 3]).unwrap().unwrap();
        let b = r.checkout(&model, 16, &[1, 9]).unwrap().unwrap();
        assert!(r.checkout(&model, 16, &[1]).unwrap().is_none());
        assert_eq!(r.active(), 2);
        let (ia, ib) = (a.index, b.index);
        r.checkin(ia, a.cache, vec![1, 2, 3]);
        r.checkin(ib, b.cache, vec![1, 9]);
        assert_eq!(r.active(), 0);
        let c = r.checkout(&model, 16, &[1, 2, 3, 4]).unwrap().unwrap();
        assert_eq!(c.index, ia);
        assert_eq!(c.cached, vec![1, 2, 3]);
    }
}
