//! Chat-completion HTTP backend with retry, backoff, and rate limiting.
//!
//! The wire format is the de-facto chat-completion JSON shape; per-backend
//! differences are configuration (reply field paths), not code branches.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, ModelRequest, ModelResponse, Usage};
use crate::error::{Error, Result};
use crate::stablehash;

/// Endpoint configuration. Credentials are taken from the named environment
/// variable at request time and are never persisted or logged.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub credential_env: Option<String>,
    /// JSON pointer to the reply text.
    #[serde(default = "default_text_path")]
    pub text_path: String,
    #[serde(default = "default_prompt_tokens_path")]
    pub prompt_tokens_path: String,
    #[serde(default = "default_completion_tokens_path")]
    pub completion_tokens_path: String,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_max_ms")]
    pub backoff_max_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
}

fn default_text_path() -> String {
    "/choices/0/message/content".into()
}
fn default_prompt_tokens_path() -> String {
    "/usage/prompt_tokens".into()
}
fn default_completion_tokens_path() -> String {
    "/usage/completion_tokens".into()
}
fn default_max_attempts() -> u32 {
    4
}
fn default_backoff_base_ms() -> u64 {
    250
}
fn default_backoff_max_ms() -> u64 {
    4000
}
fn default_timeout_ms() -> u64 {
    30_000
}

/// Minimal interval scheduler implementing a requests-per-minute cap.
struct RateLimiter {
    interval: Duration,
    next_ok: Mutex<Instant>,
}

impl RateLimiter {
    fn new(rpm: u32) -> RateLimiter {
        RateLimiter {
            interval: Duration::from_secs_f64(60.0 / rpm.max(1) as f64),
            next_ok: Mutex::new(Instant::now()),
        }
    }

    fn acquire(&self) {
        let wait = {
            let mut next = self.next_ok.lock().expect("limiter lock");
            let now = Instant::now();
            let start = (*next).max(now);
            *next = start + self.interval;
            start.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

pub struct HttpBackend {
    name: String,
    config: EndpointConfig,
    client: reqwest::blocking::Client,
    limiter: Option<RateLimiter>,
}

impl HttpBackend {
    pub fn new(name: impl Into<String>, config: EndpointConfig) -> Result<HttpBackend> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| Error::Protocol(format!("cannot build http client: {e}")))?;
        let limiter = config.requests_per_minute.map(RateLimiter::new);
        Ok(HttpBackend {
            name: name.into(),
            config,
            client,
            limiter,
        })
    }

    fn credential(&self) -> Result<Option<String>> {
        match &self.config.credential_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                Error::Validation(format!("credential environment variable `{var}` not set"))
            }),
        }
    }

    /// Deterministic jitter in [0, base) derived from the request id and
    /// attempt number, so retry schedules are reproducible.
    fn backoff(&self, request_id: &str, attempt: u32) -> Duration {
        let exp = self
            .config
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(16))
            .min(self.config.backoff_max_ms);
        let jitter = stablehash::stable_hash(attempt as u64, &[request_id])
            % self.config.backoff_base_ms.max(1);
        Duration::from_millis(exp + jitter)
    }

    fn extract(&self, body: &serde_json::Value, request_id: &str) -> Result<(String, Usage)> {
        let text = body
            .pointer(&self.config.text_path)
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                Error::Protocol(format!(
                    "reply for {request_id} has no text at `{}`",
                    self.config.text_path
                ))
            })?
            .to_string();
        let grab = |path: &str| body.pointer(path).and_then(|v| v.as_u64()).unwrap_or(0);
        let usage = Usage {
            prompt_tokens: grab(&self.config.prompt_tokens_path),
            completion_tokens: grab(&self.config.completion_tokens_path),
        };
        Ok((text, usage))
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse> {
        request.validate()?;
        let body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let credential = self.credential()?;
        let started = Instant::now();
        let mut last_error = String::new();

        for attempt in 0..self.config.max_attempts {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let mut builder = self.client.post(&self.config.base_url).json(&body);
            if let Some(token) = &credential {
                builder = builder.bearer_auth(token);
            }
            match builder.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let value: serde_json::Value = resp.json().map_err(|e| {
                            Error::Protocol(format!("non-JSON reply for {}: {e}", request.request_id))
                        })?;
                        let (text, usage) = self.extract(&value, &request.request_id)?;
                        return Ok(ModelResponse::raw(
                            &request.request_id,
                            &self.name,
                            text,
                            usage,
                            started.elapsed().as_millis() as u64,
                        ));
                    }
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    last_error = format!("HTTP {status}");
                    if !retryable {
                        return Err(Error::Transport {
                            attempts: attempt + 1,
                            message: last_error,
                        });
                    }
                }
                Err(e) => {
                    last_error = e.to_string();
                }
            }
            if attempt + 1 < self.config.max_attempts {
                std::thread::sleep(self.backoff(&request.request_id, attempt));
            }
        }
        Err(Error::Transport {
            attempts: self.config.max_attempts,
            message: last_error,
        })
    }
}
