//! HTTP server exposing a loaded model through an OpenAI-style
//! chat-completions API with server-sent-event streaming.
//!
//! Endpoints: `POST /v1/chat/completions`, `GET /v1/models`,
//! `GET /health`.

pub mod api;
mod error;
mod routes;
mod state;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use tokio::net::TcpListener;
use tower_http::cors::CorsLayer;

pub use error::{ApiError, ServerError};
pub use state::{AppState, Lease, Limits, LoadedModel, SessionRegistry};

#[derive(Debug, Clone, clap::Args)]
pub struct ServeArgs {
    #[arg(long, env = "DANUBE_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "DANUBE_PORT", default_value_t = 8080)]
    pub port: u16,
    /// GGUF checkpoint to serve. Without one, inference endpoints answer 503.
    #[arg(long, env = "DANUBE_MODEL")]
    pub model: Option<PathBuf>,
    /// Context length (KV cache tokens) per session.
    #[arg(long, env = "DANUBE_CTX", default_value_t = 2048)]
    pub ctx: usize,
    /// Concurrent inference workers.
    #[arg(long, env = "DANUBE_WORKERS", default_value_t = 1)]
    pub workers: usize,
    /// Requests allowed to wait for a worker before new ones get 503.
    #[arg(long, env = "DANUBE_QUEUE", default_value_t = 8)]
    pub queue: usize,
    /// Chat template used when the model file has none: `danube` or Jinja source.
    #[arg(long, env = "DANUBE_CHAT_TEMPLATE")]
    pub chat_template: Option<String>,
}

impl ServeArgs {
    pub fn limits(&self) -> Limits {
        Limits { ctx: self.ctx, workers: self.workers, queue: self.queue }
    }

    /// Loads the configured model (if any) and builds the shared state.
    pub fn state(&self) -> Result<Arc<AppState>, ServerError> {
        let model = match &self.model {
            Some(path) => {
                let m = LoadedModel::load(path, self.chat_template.as_deref())?;
                if self.ctx > m.model.config().max_context {
                    return Err(danube_core::Error::Config(format!(
                        "--ctx {} exceeds the model's context length {}",
                        self.ctx,
                        m.model.config().max_context
                    ))
                    .into());
                }
                Some(m)
            }
            None => None,
        };
        Ok(AppState::new(model, self.limits()))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(routes::chat_completions))
        .route("/v1/models", get(routes::models))
        .route("/health", get(routes::health))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

/// Loads the model, binds and serves until Ctrl-C.
pub fn run(args: &ServeArgs) -> Result<(), ServerError> {
    let state = args.state()?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = TcpListener::bind(&addr).await.map_err(|source| ServerError::Bind { addr: addr.clone(), source })?;
        let local: SocketAddr = listener.local_addr()?;
        match &state.model {
            Some(m) => eprintln!("serving {} ({}) on http://{local}", m.name, m.quantization),
            None => eprintln!("no model loaded; listening on http://{local}"),
        }
        serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}
