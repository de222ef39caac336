use std::convert::Infallible;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::State;
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::Json;
use danube_core::{generate, Error, Generation, GenerationParams};
use futures::stream::{self, Stream};
use tokio::sync::{mpsc, OwnedSemaphorePermit};

use crate::api::*;
use crate::error::ApiError;
use crate::state::{Admission, AppState, LoadedModel};

pub async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        uptime_seconds: state.started.elapsed().as_secs_f64(),
        active_sessions: state.active_sessions(),
        queued_requests: state.queued(),
        model_loaded: state.model.is_some(),
    })
}

pub async fn models(State(state): State<Arc<AppState>>) -> Result<Json<ModelList>, ApiError> {
    let m = state.model.as_ref().ok_or_else(ApiError::not_loaded)?;
    let config = m.model.config().clone();
    Ok(Json(ModelList {
        object: "list".into(),
        data: vec![ModelCard {
            id: m.name.clone(),
            object: "model".into(),
            owned_by: "local".into(),
            quantization: m.quantization.clone(),
            parameter_count: config.count_parameters(),
            context_length: state.limits.ctx,
            config,
        }],
    }))
}

enum Msg {
    Delta(String),
    Done(Generation),
    Failed(Error),
}

struct Job {
    state: Arc<AppState>,
    loaded: Arc<LoadedModel>,
    prompt: Vec<u32>,
    params: GenerationParams,
    tx: mpsc::Sender<Msg>,
    cancel: Arc<AtomicBool>,
    _permit: OwnedSemaphorePermit,
    _admission: Admission,
}

fn run_job(job: Job) {
    let Job { state, loaded, prompt, params, tx, cancel, .. } = &job;
    let lease = match state.registry.lock().unwrap().checkout(&loaded.model, state.limits.ctx, prompt) {
        Ok(Some(l)) => l,
        Ok(None) => {
            let _ = tx.blocking_send(Msg::Failed(Error::Config("no free session slot".into())));
            return;
        }
        Err(e) => {
            let _ = tx.blocking_send(Msg::Failed(e));
            return;
        }
    };
    let mut cache = lease.cache;
    let common = lease.cached.iter().zip(prompt).take_while(|(a, b)| a == b).count();
    cache.truncate(common.min(cache.len()));

    let result = generate(&loaded.model, &loaded.tokenizer, &mut cache, prompt, params, |text| {
        if cancel.load(Ordering::SeqCst) || tx.is_closed() {
            return false;
        }
        text.is_empty() || tx.blocking_send(Msg::Delta(text.to_string())).is_ok()
    });
    match result {
        Ok(g) => {
            let mut held: Vec<u32> = prompt.iter().chain(&g.tokens).copied().collect();
            held.truncate(cache.len());
            state.registry.lock().unwrap().checkin(lease.index, cache, held);
            let _ = tx.blocking_send(Msg::Done(g));
        }
        Err(e) => {
            state.registry.lock().unwrap().discard(lease.index, cache);
            let _ = tx.blocking_send(Msg::Failed(e));
        }
    }
}

/// Sets the cancel flag when the request future is dropped.
struct CancelOnDrop(Arc<AtomicBool>);

impl Drop for CancelOnDrop {
    fn drop(&mut self) {
        self.0.store(true, Ordering::SeqCst);
    }
}

struct Meta {
    id: String,
    created: u64,
    model: String,
}

impl Meta {
    fn chunk(&self, delta: Delta, finish: Option<String>, usage: Option<Usage>) -> Event {
        let c = ChatChunk {
            id: self.id.clone(),
            object: "chat.completion.chunk".into(),
            created: self.created,
            model: self.model.clone(),
            choices: vec![ChunkChoice { index: 0, delta, finish_reason: finish }],
            usage,
        };
        Event::default().data(serde_json::to_string(&c).expect("chunk serializes"))
    }
}

fn usage(g: &Generation) -> Usage {
    Usage { prompt_tokens: g.prompt_tokens, completion_tokens: g.tokens.len(), total_tokens: g.prompt_tokens + g.tokens.len() }
}

pub async fn chat_completions(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    match chat(state, body).await {
        Ok(r) => r,
        Err(e) => e.into_response(),
    }
}

async fn chat(state: Arc<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let loaded = state.model.clone().ok_or_else(ApiError::not_loaded)?;
    let req: ChatRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request("invalid_request", format!("malformed request: {e}")))?;
    let turns = req.turns()?;
    let prompt = loaded.template.render(&turns, &loaded.tokenizer)?;
    let ctx = state.limits.ctx;
    if prompt.len() > ctx {
        return Err(Error::Capacity { needed: prompt.len(), capacity: ctx }.into());
    }
    let params = req.params(ctx - prompt.len())?;

    let admission = Admission::try_new(&state).ok_or_else(ApiError::busy)?;
    let permit = state.workers.clone().acquire_owned().await.expect("worker semaphore is never closed");
    let meta = Meta {
        id: format!("chatcmpl-{}", state.next_id.fetch_add(1, Ordering::SeqCst)),
        created: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        model: loaded.name.clone(),
    };
    let (tx, mut rx) = mpsc::channel(32);
    let cancel = Arc::new(AtomicBool::new(false));
    let job = Job {
        state: state.clone(),
        loaded,
        prompt,
        params,
        tx,
        cancel: cancel.clone(),
        _permit: permit,
        _admission: admission,
    };
    tokio::task::spawn_blocking(move || run_job(job));

    if req.stream {
        return Ok(Sse::new(event_stream(rx, meta)).into_response());
    }

    let _guard = CancelOnDrop(cancel);
    loop {
        match rx.recv().await {
            Some(Msg::Delta(_)) => {}
            Some(Msg::Done(g)) => {
                let body = ChatResponse {
                    id: meta.id,
                    object: "chat.completion".into(),
                    created: meta.created,
                    model: meta.model,
                    choices: vec![Choice {
                        index: 0,
                        message: AssistantMessage { role: "assistant".into(), content: g.text.clone() },
                        finish_reason: finish_reason(g.finish).into(),
                    }],
                    usage: usage(&g),
                };
                return Ok(Json(body).into_response());
            }
            Some(Msg::Failed(e)) => return Err(e.into()),
            None => return Err(Error::Config("inference worker stopped".into()).into()),
        }
    }
}

enum Phase {
    Start,
    Body,
    Finish,
    Closed,
}

fn event_stream(rx: mpsc::Receiver<Msg>, meta: Meta) -> impl Stream<Item = Result<Event, Infallible>> {
    stream::unfold((rx, Phase::Start, meta), |(mut rx, phase, meta)| async move {
        let event = match phase {
            Phase::Start => {
                let e = meta.chunk(Delta { role: Some("assistant".into()), content: None }, None, None);
                return Some((Ok(e), (rx, Phase::Body, meta)));
            }
            Phase::Body => match rx.recv().await {
                Some(Msg::Delta(t)) => {
                    let e = meta.chunk(Delta { role: None, content: Some(t) }, None, None);
                    return Some((Ok(e), (rx, Phase::Body, meta)));
                }
                Some(Msg::Done(g)) => {
                    meta.chunk(Delta::default(), Some(finish_reason(g.finish).into()), Some(usage(&g)))
                }
                Some(Msg::Failed(e)) => {
                    let err = ApiError::from(e);
                    let body = serde_json::json!({ "error": { "code": err.code, "message": err.message, "type": "server_error" } });
                    Event::default().data(body.to_string())
                }
                None => return None,
            },
            Phase::Finish => return Some((Ok(Event::default().data("[DONE]")), (rx, Phase::Closed, meta))),
            Phase::Closed => return None,
        };
        Some((Ok(event), (rx, Phase::Finish, meta)))
    })
}
