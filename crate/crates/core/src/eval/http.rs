//! Chat-completions client. One user message per call; token counts come
//! from the response's `usage` block.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::backend::{BackendError, Generation, ModelBackend};

fn default_api_key_env() -> Option<String> {
    Some("PARETOPROMPT_API_KEY".into())
}
fn default_max_tokens() -> u32 {
    256
}
fn default_timeout() -> u64 {
    120
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Full endpoint URL, e.g. `http://localhost:8000/v1/chat/completions`.
    pub url: String,
    /// Environment variable holding a bearer token. Unset variable means no
    /// `Authorization` header.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

impl HttpBackendConfig {
    pub fn new(url: impl Into<String>) -> Self {
        HttpBackendConfig {
            url: url.into(),
            api_key_env: default_api_key_env(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
            max_attempts: default_attempts(),
            backoff_ms: default_backoff(),
        }
    }
}

pub struct HttpBackend {
    cfg: HttpBackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

enum Failure {
    Retry(String),
    Fatal(BackendError),
}

impl HttpBackend {
    pub fn new(cfg: HttpBackendConfig) -> Result<Self, BackendError> {
        if !(cfg.url.starts_with("http://") || cfg.url.starts_with("https://")) {
            return Err(BackendError::Config(format!("`{}` is not an http(s) URL", cfg.url)));
        }
        if cfg.max_attempts == 0 {
            return Err(BackendError::Config("max_attempts must be at least 1".into()));
        }
        let api_key = cfg
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|k| !k.is_empty());
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build();
        Ok(HttpBackend {
            cfg,
            api_key,
            agent: ureq::Agent::new_with_config(config),
        })
    }

    pub fn request_body(&self, model: &str, prompt: &str) -> serde_json::Value {
        json!({
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_tokens,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<Generation, Failure> {
        let mut req = self
            .agent
            .post(&self.cfg.url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| Failure::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retry(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(Failure::Retry(format!("HTTP {status}: {}", truncate(&text))));
        }
        if !(200..300).contains(&status) {
            return Err(Failure::Fatal(BackendError::Protocol(format!(
                "HTTP {status}: {}",
                truncate(&text)
            ))));
        }
        parse_response(&text).map_err(Failure::Fatal)
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(200).collect()
}

/// Extracts the first choice's text and the usage counts.
pub(crate) fn parse_response(text: &str) -> Result<Generation, BackendError> {
    let parsed: ChatResponse =
        serde_json::from_str(text).map_err(|e| BackendError::Protocol(format!("bad JSON body: {e}")))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Protocol("response has no choices".into()))?;
    let usage = parsed
        .usage
        .ok_or_else(|| BackendError::Protocol("response has no usage block".into()))?;
    Ok(Generation {
        text: choice.message.content.unwrap_or_default(),
        input_tokens: usage.prompt_tokens,
        output_tokens: usage.completion_tokens,
    })
}

impl ModelBackend for HttpBackend {
    fn generate(&self, model: &str, prompt: &str) -> Result<Generation, BackendError> {
        let body = self.request_body(model, prompt);
        let mut delay = Duration::from_millis(self.cfg.backoff_ms);
        let mut last = String::new();
        for attempt in 1..=self.cfg.max_attempts {
            match self.attempt(&body) {
                Ok(g) => return Ok(g),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(msg)) => {
                    log::warn!(
                        "attempt {attempt}/{} to {} failed: {msg}",
                        self.cfg.max_attempts,
                        self.cfg.url
                    );
                    last = msg;
                    if attempt < self.cfg.max_attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(BackendError::Transport(format!(
            "{} attempts failed, last: {last}",
            self.cfg.max_attempts
        )))
    }
}
