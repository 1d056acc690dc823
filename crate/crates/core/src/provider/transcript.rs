use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ProviderConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub call_id: String,
    pub tag: String,
    pub provider_id: String,
    pub model: String,
    pub temperature: f64,
    /// sha256 of `request_body`.
    pub request_digest: String,
    /// Exact bytes sent (credential lives in headers, which are not stored).
    pub request_body: String,
    /// Exact bytes received.
    pub response_body: String,
    pub response_text: String,
    pub latency_ms: u64,
    pub attempts: u32,
    pub timestamp: String,
}

pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Transcript {
    pub(super) fn new(
        tag: &str,
        cfg: &ProviderConfig,
        request_body: &str,
        response_body: &str,
        response_text: &str,
        latency: Duration,
        attempts: u32,
    ) -> Self {
        let request_digest = digest(request_body);
        let call_id = digest(&format!("{tag}\n{request_digest}"))[..16].to_string();
        Self {
            call_id,
            tag: tag.to_string(),
            provider_id: cfg.provider_id.clone(),
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            request_digest,
            request_body: request_body.to_string(),
            response_body: response_body.to_string(),
            response_text: response_text.to_string(),
            latency_ms: latency.as_millis() as u64,
            attempts,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        }
    }

    /// Request body still matches its recorded digest.
    pub fn verify(&self) -> bool {
        digest(&self.request_body) == self.request_digest
    }
}

/// Append-only directory of `<call_id>.json` files.
#[derive(Debug, Clone)]
pub struct TranscriptStore {
    dir: PathBuf,
    lock: Arc<Mutex<()>>,
}

impl TranscriptStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), lock: Arc::new(Mutex::new(())) }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, call_id: &str) -> PathBuf {
        self.dir.join(format!("{call_id}.json"))
    }

    /// Persists `t`, never overwriting: an occupied call id gets a `-2`, `-3`, … suffix.
    pub fn append(&self, mut t: Transcript) -> Result<Transcript, String> {
        let _guard = self.lock.lock().unwrap();
        fs::create_dir_all(&self.dir).map_err(|e| e.to_string())?;
        let base = t.call_id.clone();
        let mut n = 1;
        loop {
            let path = self.path_for(&t.call_id);
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let mut text = serde_json::to_string_pretty(&t).map_err(|e| e.to_string())?;
                    text.push('\n');
                    f.write_all(text.as_bytes()).map_err(|e| e.to_string())?;
                    return Ok(t);
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    n += 1;
                    t.call_id = format!("{base}-{n}");
                }
                Err(e) => return Err(format!("{}: {e}", path.display())),
            }
        }
    }

    pub fn load(&self, call_id: &str) -> Result<Transcript, String> {
        let path = self.path_for(call_id);
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
