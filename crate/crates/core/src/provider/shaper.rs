use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatRole, Message, ProviderConfig};

/// Vendor request/response shape behind the common chat contract.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiShape {
    /// `POST endpoint` with `{model, messages, temperature}`; reply in
    /// `choices[0].message.content`.
    #[default]
    OpenAiChat,
    /// `POST endpoint/models/{model}:generateContent`; reply in
    /// `candidates[0].content.parts[*].text`.
    Gemini,
}

#[derive(Debug, Clone)]
pub struct ShapedRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl ApiShape {
    pub fn shape(self, cfg: &ProviderConfig, messages: &[Message], credential: Option<&str>) -> ShapedRequest {
        let mut headers = vec![("content-type".to_string(), "application/json".to_string())];
        match self {
            ApiShape::OpenAiChat => {
                if let Some(key) = credential {
                    headers.push(("authorization".into(), format!("Bearer {key}")));
                }
                let body = json!({
                    "model": cfg.model,
                    "messages": messages,
                    "temperature": cfg.temperature,
                });
                ShapedRequest { url: cfg.endpoint.clone(), headers, body: body.to_string() }
            }
            ApiShape::Gemini => {
                if let Some(key) = credential {
                    headers.push(("x-goog-api-key".into(), key.to_string()));
                }
                let system: Vec<&str> = messages
                    .iter()
                    .filter(|m| m.role == ChatRole::System)
                    .map(|m| m.content.as_str())
                    .collect();
                let contents: Vec<Value> = messages
                    .iter()
                    .filter(|m| m.role != ChatRole::System)
                    .map(|m| {
                        let role = if m.role == ChatRole::Assistant { "model" } else { "user" };
                        json!({"role": role, "parts": [{"text": m.content}]})
                    })
                    .collect();
                let mut body = json!({
                    "contents": contents,
                    "generationConfig": {"temperature": cfg.temperature},
                });
                if !system.is_empty() {
                    body["systemInstruction"] = json!({"parts": [{"text": system.join("\n\n")}]});
                }
                let url = format!("{}/models/{}:generateContent", cfg.endpoint.trim_end_matches('/'), cfg.model);
                ShapedRequest { url, headers, body: body.to_string() }
            }
        }
    }

    pub fn extract(self, body: &str) -> Result<String, String> {
        let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
        match self {
            ApiShape::OpenAiChat => v["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| "missing choices[0].message.content".to_string()),
            ApiShape::Gemini => {
                let parts = v["candidates"][0]["content"]["parts"]
                    .as_array()
                    .ok_or_else(|| "missing candidates[0].content.parts".to_string())?;
                Ok(parts.iter().filter_map(|p| p["text"].as_str()).collect::<Vec<_>>().concat())
            }
        }
    }
}
