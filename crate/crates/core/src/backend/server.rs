//! HTTP server for the logits wire protocol.
//!
//! Serves any [`LanguageModel`] (and optionally an [`Embedder`]) so that the
//! remote client can be exercised against local backends.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::{Json, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::Router;
use tokio::sync::oneshot;

use super::LanguageModel;
use crate::error::{Error, Result};
use crate::retrieval::Embedder;

/// Request and response bodies of the wire protocol.
pub mod wire {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct Meta {
        pub vocab_size: usize,
        pub eos_id: u32,
        #[serde(default)]
        pub max_context: Option<usize>,
        pub model_id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub architecture: Option<String>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct TokenizeRequest {
        pub text: String,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct TokenizeResponse {
        pub ids: Vec<u32>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct DetokenizeRequest {
        pub ids: Vec<u32>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct DetokenizeResponse {
        pub text: String,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct LogitsRequest {
        pub ids: Vec<u32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub decoder_ids: Option<Vec<u32>>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct LogitsResponse {
        pub logits: Vec<f64>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct EmbedRequest {
        pub texts: Vec<String>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize)]
    pub struct EmbedResponse {
        pub vectors: Vec<Vec<f64>>,
    }

    #[derive(Debug, Clone, Default, Serialize, Deserialize)]
    pub struct ErrorBody {
        pub error: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub len: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pub max: Option<usize>,
    }
}

#[derive(Clone)]
struct AppState {
    model: Arc<dyn LanguageModel>,
    embedder: Option<Arc<dyn Embedder>>,
}

type Reply<T> = std::result::Result<Json<T>, (StatusCode, Json<wire::ErrorBody>)>;

fn reject(err: Error) -> (StatusCode, Json<wire::ErrorBody>) {
    let mut body = wire::ErrorBody {
        error: err.to_string(),
        ..Default::default()
    };
    let status = match err {
        Error::PrefixTooLong { len, max } => {
            body.len = Some(len);
            body.max = Some(max);
            StatusCode::PAYLOAD_TOO_LARGE
        }
        Error::TokenOutOfRange { .. } | Error::Untokenizable(_) => StatusCode::BAD_REQUEST,
        Error::EmbedderUnavailable(_) => StatusCode::NOT_FOUND,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    (status, Json(body))
}

async fn blocking<T, F>(f: F) -> Reply<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(v)) => Ok(Json(v)),
        Ok(Err(e)) => Err(reject(e)),
        Err(join) => Err(reject(Error::RemoteUnavailable(join.to_string()))),
    }
}

async fn meta(State(state): State<AppState>) -> Json<wire::Meta> {
    let d = state.model.descriptor();
    Json(wire::Meta {
        vocab_size: d.vocab.size,
        eos_id: d.vocab.eos_id,
        max_context: state.model.max_context(),
        model_id: d.identity.clone(),
        architecture: None,
    })
}

async fn tokenize(
    State(state): State<AppState>,
    Json(req): Json<wire::TokenizeRequest>,
) -> Reply<wire::TokenizeResponse> {
    blocking(move || {
        let ids = state.model.tokenize(&req.text)?;
        Ok(wire::TokenizeResponse {
            ids: ids.into_inner(),
        })
    })
    .await
}

async fn detokenize(
    State(state): State<AppState>,
    Json(req): Json<wire::DetokenizeRequest>,
) -> Reply<wire::DetokenizeResponse> {
    blocking(move || {
        let text = state.model.detokenize(&req.ids)?;
        Ok(wire::DetokenizeResponse { text })
    })
    .await
}

async fn logits(
    State(state): State<AppState>,
    Json(req): Json<wire::LogitsRequest>,
) -> Reply<wire::LogitsResponse> {
    blocking(move || {
        let z = match req.decoder_ids {
            Some(d) => state.model.step_logits(&req.ids, &d)?,
            None => state.model.next_logits(&req.ids)?,
        };
        Ok(wire::LogitsResponse {
            logits: z.into_inner(),
        })
    })
    .await
}

async fn embed(
    State(state): State<AppState>,
    Json(req): Json<wire::EmbedRequest>,
) -> Reply<wire::EmbedResponse> {
    blocking(move || {
        let embedder = state
            .embedder
            .ok_or_else(|| Error::EmbedderUnavailable("server has no embedder".into()))?;
        let vectors = req
            .texts
            .iter()
            .map(|t| embedder.embed(t).map(|v| v.values().to_vec()))
            .collect::<Result<_>>()?;
        Ok(wire::EmbedResponse { vectors })
    })
    .await
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/meta", get(meta))
        .route("/v1/tokenize", post(tokenize))
        .route("/v1/detokenize", post(detokenize))
        .route("/v1/logits", post(logits))
        .route("/v1/embed", post(embed))
        .with_state(state)
}

/// A server running on a background thread. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves until the handle is
/// dropped or stopped.
pub fn spawn(
    model: Arc<dyn LanguageModel>,
    embedder: Option<Arc<dyn Embedder>>,
    addr: SocketAddr,
) -> Result<ServerHandle> {
    let listener = std::net::TcpListener::bind(addr).map_err(|e| Error::io(addr.to_string(), e))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| Error::io(addr.to_string(), e))?;
    let bound = listener
        .local_addr()
        .map_err(|e| Error::io(addr.to_string(), e))?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(AppState { model, embedder });
    let thread = std::thread::Builder::new()
        .name("logits-server".into())
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_io()
                .build()
                .expect("tokio runtime");
            rt.block_on(async move {
                let listener =
                    tokio::net::TcpListener::from_std(listener).expect("listener registers");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })
        .map_err(|e| Error::io("logits-server thread", e))?;
    tracing::info!(%bound, "logits server listening");
    Ok(ServerHandle {
        addr: bound,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
