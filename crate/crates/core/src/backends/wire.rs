//! JSON bodies of the model endpoints and a server that exposes any
//! [`Editor`] / [`VisionChat`] pair over them.
//!
//! ```text
//! POST /v1/edit      {image_b64, mask_b64, prompt, seed, params{}} -> {image_b64}
//! POST /v1/outpaint  {image_b64, side: "left"|"right", pixels}     -> {image_b64}
//! POST /v1/chat      {images_b64: [...], prompt}                   -> {text}
//! errors             {code, message}
//! ```

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::backends::{BackendError, EditRequest, Editor, OutpaintRequest, VisionChat};
use crate::geometry::Edge;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditBody {
    pub image_b64: String,
    pub mask_b64: String,
    pub prompt: String,
    pub seed: u64,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutpaintBody {
    pub image_b64: String,
    pub side: Edge,
    pub pixels: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatBody {
    pub images_b64: Vec<String>,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageReply {
    pub image_b64: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextReply {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub fn b64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn unb64(text: &str) -> Result<Vec<u8>, BackendError> {
    STANDARD
        .decode(text)
        .map_err(|e| BackendError::Decode(format!("base64: {e}")))
}

impl From<&EditRequest> for EditBody {
    fn from(req: &EditRequest) -> Self {
        Self {
            image_b64: b64(&req.image),
            mask_b64: b64(&req.mask),
            prompt: req.prompt.clone(),
            seed: req.seed,
            params: req.params.clone(),
        }
    }
}

impl EditBody {
    pub fn into_request(self) -> Result<EditRequest, BackendError> {
        Ok(EditRequest {
            image: unb64(&self.image_b64)?,
            mask: unb64(&self.mask_b64)?,
            prompt: self.prompt,
            seed: self.seed,
            params: self.params,
        })
    }
}

impl From<&OutpaintRequest> for OutpaintBody {
    fn from(req: &OutpaintRequest) -> Self {
        Self {
            image_b64: b64(&req.image),
            side: req.side,
            pixels: req.pixels,
        }
    }
}

impl OutpaintBody {
    pub fn into_request(self) -> Result<OutpaintRequest, BackendError> {
        Ok(OutpaintRequest {
            image: unb64(&self.image_b64)?,
            side: self.side,
            pixels: self.pixels,
        })
    }
}

/// Canonical request bytes: fields in declaration order, params sorted.
pub fn encode_edit(req: &EditRequest) -> Vec<u8> {
    serde_json::to_vec(&EditBody::from(req)).expect("edit body serializes")
}

fn status_for(err: &BackendError) -> StatusCode {
    match err {
        BackendError::InvalidRequest(_) | BackendError::Decode(_) | BackendError::DimMismatch { .. } => {
            StatusCode::BAD_REQUEST
        }
        BackendError::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
        BackendError::Transport(_) | BackendError::Status { .. } => StatusCode::BAD_GATEWAY,
    }
}

struct ApiError(StatusCode, ErrorBody);

impl From<BackendError> for ApiError {
    fn from(err: BackendError) -> Self {
        Self(
            status_for(&err),
            ErrorBody {
                code: err.tag().to_string(),
                message: err.to_string(),
            },
        )
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rej: JsonRejection) -> Self {
        Self(
            StatusCode::BAD_REQUEST,
            ErrorBody {
                code: "invalid_request".into(),
                message: rej.body_text(),
            },
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

/// What the model server runs behind the wire.
#[derive(Clone)]
pub struct ModelService {
    pub editor: Arc<dyn Editor>,
    pub chat: Arc<dyn VisionChat>,
    /// Artificial latency added to every call.
    pub delay: Duration,
}

async fn blocking<T: Send + 'static>(
    svc: &ModelService,
    f: impl FnOnce() -> Result<T, BackendError> + Send + 'static,
) -> Result<T, ApiError> {
    if !svc.delay.is_zero() {
        tokio::time::sleep(svc.delay).await;
    }
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::from(BackendError::Transport(format!("worker panicked: {e}"))))?
        .map_err(ApiError::from)
}

async fn edit_handler(
    State(svc): State<ModelService>,
    body: Result<Json<EditBody>, JsonRejection>,
) -> Result<Json<ImageReply>, ApiError> {
    let req = body?.0.into_request()?;
    let editor = svc.editor.clone();
    let png = blocking(&svc, move || editor.edit(&req)).await?;
    Ok(Json(ImageReply { image_b64: b64(&png) }))
}

async fn outpaint_handler(
    State(svc): State<ModelService>,
    body: Result<Json<OutpaintBody>, JsonRejection>,
) -> Result<Json<ImageReply>, ApiError> {
    let req = body?.0.into_request()?;
    let editor = svc.editor.clone();
    let png = blocking(&svc, move || editor.outpaint(&req)).await?;
    Ok(Json(ImageReply { image_b64: b64(&png) }))
}

async fn chat_handler(
    State(svc): State<ModelService>,
    body: Result<Json<ChatBody>, JsonRejection>,
) -> Result<Json<TextReply>, ApiError> {
    let body = body?.0;
    let images = body
        .images_b64
        .iter()
        .map(|s| unb64(s))
        .collect::<Result<Vec<_>, _>>()?;
    let chat = svc.chat.clone();
    let prompt = body.prompt;
    let text = blocking(&svc, move || chat.chat(&images, &prompt)).await?;
    Ok(Json(TextReply { text }))
}

pub fn model_router(svc: ModelService) -> Router {
    Router::new()
        .route("/v1/edit", post(edit_handler))
        .route("/v1/outpaint", post(outpaint_handler))
        .route("/v1/chat", post(chat_handler))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(svc)
}

/// A model server on its own runtime thread; stops when dropped.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl BackgroundServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and serves `router`.
    pub fn start(router: Router, addr: SocketAddr) -> std::io::Result<Self> {
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let thread = thread::Builder::new().name("model-server".into()).spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("tokio runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener");
                let _ = axum::serve(listener, router)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })?;
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
