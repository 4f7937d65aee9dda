//! Minimal chat-completion HTTP backend.
//!
//! Speaks the common wire shape — POST `{model, messages, temperature}`,
//! read `choices[0].message.content` — against a configurable endpoint.
//! Endpoint URL and credential come from config with
//! `LTC_BACKEND_<ID>_URL` / `LTC_BACKEND_<ID>_KEY` environment overrides.

use serde_json::{json, Value};

use super::{Backend, BackendError, ChatRequest};

pub struct HttpBackend {
    url: String,
    model: String,
    api_key: Option<String>,
    timeout_secs: u64,
}

impl HttpBackend {
    pub fn new(url: String, model: String, api_key: Option<String>) -> HttpBackend {
        HttpBackend {
            url,
            model,
            api_key,
            timeout_secs: 300,
        }
    }

    /// Applies the environment overrides for a backend id.
    pub fn from_config(
        id: &str,
        url: Option<String>,
        model: String,
        key_env: Option<&str>,
    ) -> Result<HttpBackend, String> {
        let env_id = id.to_uppercase().replace('-', "_");
        let url = std::env::var(format!("LTC_BACKEND_{env_id}_URL"))
            .ok()
            .or(url)
            .ok_or_else(|| format!("backend {id:?}: no url configured"))?;
        let api_key = std::env::var(format!("LTC_BACKEND_{env_id}_KEY"))
            .ok()
            .or_else(|| key_env.and_then(|var| std::env::var(var).ok()));
        Ok(HttpBackend::new(url, model, api_key))
    }

    pub fn payload(&self, request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.params.temperature,
        });
        if let Some(max) = request.params.max_tokens {
            body["max_tokens"] = json!(max);
        }
        body
    }

    fn extract_reply(value: &Value) -> Option<String> {
        value
            .get("choices")?
            .get(0)?
            .get("message")?
            .get("content")?
            .as_str()
            .map(String::from)
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &ChatRequest, _digest: &str) -> Result<String, BackendError> {
        let mut req = ureq::post(&self.url)
            .timeout(std::time::Duration::from_secs(self.timeout_secs))
            .set("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("authorization", &format!("Bearer {key}"));
        }
        let response = req.send_json(self.payload(request)).map_err(|e| {
            let retryable = matches!(&e, ureq::Error::Transport(_))
                || matches!(&e, ureq::Error::Status(code, _) if *code == 429 || *code >= 500);
            BackendError::Transport {
                message: e.to_string(),
                retryable,
            }
        })?;
        let value: Value = response.into_json().map_err(|e| BackendError::Transport {
            message: format!("invalid response body: {e}"),
            retryable: false,
        })?;
        Self::extract_reply(&value).ok_or_else(|| BackendError::Transport {
            message: "response carries no choices[0].message.content".into(),
            retryable: false,
        })
    }
}
