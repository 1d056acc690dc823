use std::collections::VecDeque;
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct HttpRequest {
    pub url: String,
    /// May carry the credential; never persisted.
    pub headers: Vec<(String, String)>,
    pub body: String,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Moves one request body to the provider and back.
pub trait Transport: Send + Sync {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Blocking JSON-over-HTTP transport.
#[derive(Default)]
pub struct HttpTransport {
    client: OnceLock<reqwest::blocking::Client>,
}

impl Transport for HttpTransport {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let client = self.client.get_or_init(reqwest::blocking::Client::new);
        let mut builder = client.post(&request.url).timeout(request.timeout).body(request.body.clone());
        for (name, value) in &request.headers {
            builder = builder.header(name, value);
        }
        let resp = builder.send().map_err(|e| TransportError(e.without_url().to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

/// Test transport: replays a script of status codes, delegating 2xx turns
/// to an inner transport. Once the script runs out it answers with
/// `fallback` (or delegates when `None`).
pub struct ScriptedTransport<T> {
    script: Mutex<VecDeque<u16>>,
    fallback: Option<u16>,
    inner: T,
}

impl<T: Transport> ScriptedTransport<T> {
    pub fn new(script: Vec<u16>, fallback: Option<u16>, inner: T) -> Self {
        Self { script: Mutex::new(script.into()), fallback, inner }
    }
}

impl<T: Transport> Transport for ScriptedTransport<T> {
    fn post(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let next = self.script.lock().unwrap().pop_front().or(self.fallback);
        match next {
            Some(status) if !(200..300).contains(&status) => Ok(HttpResponse {
                status,
                body: format!("{{\"error\":\"scripted status {status}\"}}"),
            }),
            _ => self.inner.post(request),
        }
    }
}
