//! Blocking HTTP clients for the model endpoints.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::Url;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::backends::wire::{unb64, ChatBody, EditBody, ErrorBody, ImageReply, OutpaintBody, TextReply};
use crate::backends::{png_dimensions, BackendError, CallMetrics, EditRequest, Editor, OutpaintRequest, VisionChat};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub base_url: Url,
    pub token: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl EndpointConfig {
    /// Accepts absolute `http` or `https` URLs only.
    pub fn parse(url: &str) -> Result<Self, BackendError> {
        let mut base_url =
            Url::parse(url.trim()).map_err(|e| BackendError::InvalidRequest(format!("bad endpoint url {url:?}: {e}")))?;
        if !base_url.path().ends_with('/') {
            let path = format!("{}/", base_url.path());
            base_url.set_path(&path);
        }
        if !matches!(base_url.scheme(), "http" | "https") || base_url.host_str().is_none() {
            return Err(BackendError::InvalidRequest(format!(
                "bad endpoint url {url:?}: expected http(s)://host[:port]"
            )));
        }
        Ok(Self {
            base_url,
            token: None,
            timeout: DEFAULT_TIMEOUT,
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
        })
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.filter(|t| !t.is_empty());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Shared transport for one endpoint.
pub struct HttpClient {
    cfg: EndpointConfig,
    client: Client,
    gate: Gate,
    pub metrics: CallMetrics,
}

impl HttpClient {
    pub fn new(cfg: EndpointConfig) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            gate: Gate::new(cfg.max_in_flight.max(1)),
            cfg,
            client,
            metrics: CallMetrics::default(),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let result = self.post_inner(path, body);
        if result.is_err() {
            CallMetrics::bump(&self.metrics.errors);
        }
        result
    }

    fn post_inner<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let url = self
            .cfg
            .base_url
            .join(path)
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let _permit = self.gate.acquire();
        let mut req = self.client.post(url).json(body);
        if let Some(token) = &self.cfg.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| self.transport(e))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| self.transport(e))?;
        if !status.is_success() {
            let message = match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(err) => format!("{}: {}", err.code, err.message),
                Err(_) => String::from_utf8_lossy(&bytes).chars().take(200).collect(),
            };
            return Err(BackendError::Status {
                status: status.as_u16(),
                message,
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| BackendError::Decode(format!("response body: {e}")))
    }

    fn transport(&self, e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            BackendError::Timeout(self.cfg.timeout)
        } else {
            BackendError::Transport(e.to_string())
        }
    }
}

pub struct HttpEditor(pub HttpClient);

impl Editor for HttpEditor {
    fn edit(&self, req: &EditRequest) -> Result<Vec<u8>, BackendError> {
        req.validate()?;
        CallMetrics::bump(&self.0.metrics.edit);
        let reply: ImageReply = self.0.post("v1/edit", &EditBody::from(req))?;
        let png = unb64(&reply.image_b64)?;
        let expected = png_dimensions(&req.image)?;
        let actual = png_dimensions(&png)?;
        if expected != actual {
            return Err(BackendError::DimMismatch { expected, actual });
        }
        Ok(png)
    }

    fn outpaint(&self, req: &OutpaintRequest) -> Result<Vec<u8>, BackendError> {
        req.validate()?;
        CallMetrics::bump(&self.0.metrics.outpaint);
        let reply: ImageReply = self.0.post("v1/outpaint", &OutpaintBody::from(req))?;
        let png = unb64(&reply.image_b64)?;
        let (w, h) = png_dimensions(&req.image)?;
        let expected = (w + req.pixels, h);
        let actual = png_dimensions(&png)?;
        if expected != actual {
            return Err(BackendError::DimMismatch { expected, actual });
        }
        Ok(png)
    }
}

pub struct HttpChat(pub HttpClient);

impl VisionChat for HttpChat {
    fn chat(&self, images: &[Vec<u8>], prompt: &str) -> Result<String, BackendError> {
        CallMetrics::bump(&self.0.metrics.chat);
        let body = ChatBody {
            images_b64: images.iter().map(|i| crate::backends::wire::b64(i)).collect(),
            prompt: prompt.to_string(),
        };
        let reply: TextReply = self.0.post("v1/chat", &body)?;
        Ok(reply.text)
    }
}
