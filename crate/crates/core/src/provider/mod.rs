//! Uniform chat-completion client with retries, transcripts, and a deterministic mock.

mod mock;
mod ratelimit;
mod shaper;
mod transcript;
mod transport;

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use mock::{mock_judge_response, mock_translation_response, MockTransport};
pub use ratelimit::TokenBucket;
pub use shaper::{ApiShape, ShapedRequest};
pub use transcript::{Transcript, TranscriptStore};
pub use transport::{HttpRequest, HttpResponse, HttpTransport, ScriptedTransport, Transport, TransportError};

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("configuration: environment variable `{0}` is not set")]
    MissingCredential(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("transport: gave up after {attempts} attempt(s); last status {}", .last_status.map_or("none".to_string(), |s| s.to_string()))]
    Exhausted { attempts: u32, last_status: Option<u16>, message: String },
    #[error("transport: request rejected with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("transcript: {0}")]
    Transcript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: ChatRole,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: ChatRole::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: ChatRole::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: ChatRole::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub provider_id: String,
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Environment variable holding the API key; `None` means no credential.
    /// Defaults to `<PROVIDER_ID>_API_KEY`.
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default)]
    pub api: ApiShape,
    /// First retry waits this long; each further retry doubles it.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    /// Token-bucket rate per provider id; `None` = unlimited.
    #[serde(default)]
    pub rate_per_sec: Option<f64>,
}

fn default_retries() -> u32 {
    4
}
fn default_timeout() -> u64 {
    300
}
fn default_backoff() -> u64 {
    1000
}

impl ProviderConfig {
    pub fn new(provider_id: &str, endpoint: &str, model: &str, api: ApiShape) -> Self {
        Self {
            provider_id: provider_id.into(),
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.0,
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            credential_env: Some(format!("{}_API_KEY", provider_id.to_uppercase().replace('-', "_"))),
            api,
            backoff_ms: default_backoff(),
            rate_per_sec: None,
        }
    }

    /// The hosted judges and the translation model, with vendor defaults.
    pub fn defaults() -> Vec<ProviderConfig> {
        vec![
            ProviderConfig::new("gpt", "https://api.openai.com/v1/chat/completions", "gpt-5-pro", ApiShape::OpenAiChat),
            ProviderConfig::new(
                "gemini",
                "https://generativelanguage.googleapis.com/v1beta",
                "gemini-2.5-pro",
                ApiShape::Gemini,
            ),
            ProviderConfig::new("deepseek", "https://api.deepseek.com/chat/completions", "deepseek-chat", ApiShape::OpenAiChat),
        ]
    }

    /// Same identity, but served by the offline mock.
    pub fn as_mock(&self) -> Self {
        Self {
            endpoint: "mock://local".into(),
            credential_env: None,
            api: ApiShape::OpenAiChat,
            backoff_ms: 0,
            rate_per_sec: None,
            ..self.clone()
        }
    }

    fn credential(&self) -> Result<Option<String>, ProviderError> {
        match &self.credential_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Ok(Some(v)),
                _ => Err(ProviderError::MissingCredential(var.clone())),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub text: String,
    pub transcript: Transcript,
}

/// A provider config bound to a transport and a transcript store.
#[derive(Clone)]
pub struct Client {
    config: ProviderConfig,
    transport: Arc<dyn Transport>,
    store: TranscriptStore,
    limiter: Option<Arc<TokenBucket>>,
}

impl std::fmt::Debug for Client {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Client").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Client {
    pub fn new(config: ProviderConfig, transport: Arc<dyn Transport>, store: TranscriptStore) -> Self {
        let limiter = config.rate_per_sec.map(|r| ratelimit::shared(&config.provider_id, r));
        Self { config, transport, store, limiter }
    }

    pub fn http(config: ProviderConfig, store: TranscriptStore) -> Self {
        Self::new(config, Arc::new(HttpTransport::default()), store)
    }

    pub fn mock(config: &ProviderConfig, seed: u64, store: TranscriptStore) -> Self {
        Self::new(config.as_mock(), Arc::new(MockTransport::new(seed)), store)
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn store(&self) -> &TranscriptStore {
        &self.store
    }

    /// Sends `messages`, retrying 429/5xx and transport failures with exponential
    /// backoff. The response text is returned verbatim and the transcript is
    /// persisted before returning. `tag` names the call site and seeds the call id.
    pub fn complete(&self, messages: &[Message], tag: &str) -> Result<Completion, ProviderError> {
        if messages.is_empty() {
            return Err(ProviderError::Config("no messages to send".into()));
        }
        let credential = self.config.credential()?;
        let shaped = self.config.api.shape(&self.config, messages, credential.as_deref());
        let request = HttpRequest {
            url: shaped.url,
            headers: shaped.headers,
            body: shaped.body,
            timeout: Duration::from_secs(self.config.timeout_secs),
        };

        let started = Instant::now();
        let max_attempts = self.config.max_retries + 1;
        let mut last_status = None;
        let mut last_message = String::new();
        for attempt in 1..=max_attempts {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            match self.transport.post(&request) {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    let text = self.config.api.extract(&resp.body).map_err(ProviderError::Malformed)?;
                    let transcript = Transcript::new(
                        tag,
                        &self.config,
                        &request.body,
                        &resp.body,
                        &text,
                        started.elapsed(),
                        attempt,
                    );
                    let transcript = self.store.append(transcript).map_err(ProviderError::Transcript)?;
                    return Ok(Completion { text, transcript });
                }
                Ok(resp) if resp.status == 429 || resp.status >= 500 => {
                    last_status = Some(resp.status);
                    last_message = truncate(&resp.body);
                }
                Ok(resp) => {
                    return Err(ProviderError::Rejected { status: resp.status, message: truncate(&resp.body) });
                }
                Err(e) => {
                    last_status = None;
                    last_message = e.to_string();
                }
            }
            if attempt < max_attempts && self.config.backoff_ms > 0 {
                let wait = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
        }
        Err(ProviderError::Exhausted { attempts: max_attempts, last_status, message: last_message })
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(200).collect()
}
