//! Uniform access to model backends: a chat-completion HTTP client, a
//! deterministic bias-injectable mock, response parsing and failure
//! classification, cost accounting, and an append-only response cache.

pub mod cache;
pub mod cost;
pub mod http;
pub mod mock;
pub mod parse;

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Message role in a chat-completion prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// One backend request. Temperature defaults to 0 so audits stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub request_id: String,
    pub backend: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Pipeline metadata (item id, category, trial id) used by the mock
    /// backend and by aggregation; opaque to HTTP backends.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl ModelRequest {
    pub fn new(request_id: impl Into<String>, backend: impl Into<String>, messages: Vec<Message>) -> Self {
        ModelRequest {
            request_id: request_id.into(),
            backend: backend.into(),
            messages,
            temperature: 0.0,
            max_tokens: 512,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(crate::error::Error::Validation(
                "request has no user message".into(),
            ));
        }
        if self.temperature < 0.0 {
            return Err(crate::error::Error::Validation(
                "temperature must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-criterion eligibility verdict, the four TrialGPT-style classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EligibilityLabel {
    Included,
    NotIncluded,
    Excluded,
    NotExcluded,
}

impl EligibilityLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            EligibilityLabel::Included => "included",
            EligibilityLabel::NotIncluded => "not included",
            EligibilityLabel::Excluded => "excluded",
            EligibilityLabel::NotExcluded => "not excluded",
        }
    }
}

/// Response-pathology classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    MissingDocument,
    Rejection,
    Repetition,
}

/// Parsed payload of a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Parsed {
    QaAnswer { label: String },
    Eligibility { verdicts: Vec<EligibilityLabel> },
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One backend reply. `parsed` and `failure` are filled by
/// [`parse::finalize_qa`] / [`parse::finalize_eligibility`] after transport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub request_id: String,
    pub backend: String,
    pub raw_text: String,
    pub parsed: Parsed,
    pub failure: Option<FailureKind>,
    pub usage: Usage,
    pub latency_ms: u64,
}

impl ModelResponse {
    pub fn raw(request_id: &str, backend: &str, raw_text: String, usage: Usage, latency_ms: u64) -> Self {
        ModelResponse {
            request_id: request_id.to_string(),
            backend: backend.to_string(),
            raw_text,
            parsed: Parsed::Unparseable,
            failure: None,
            usage,
            latency_ms,
        }
    }
}

/// A model backend. Implementations must be safe to call from worker threads.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse>;
}

/// Run all requests through the backend with at most `max_in_flight`
/// concurrent calls. Responses are keyed by request id; a duplicate id keeps
/// its first recorded response.
pub fn dispatch(
    backend: &dyn Backend,
    requests: &[ModelRequest],
    max_in_flight: usize,
) -> BTreeMap<String, Result<ModelResponse>> {
    let workers = max_in_flight.max(1).min(requests.len().max(1));
    let queue = Mutex::new(requests.iter());
    let results: Mutex<BTreeMap<String, Result<ModelResponse>>> = Mutex::new(BTreeMap::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let req = { queue.lock().expect("queue lock").next() };
                match req {
                    Some(req) => {
                        let outcome = backend.complete(req);
                        let mut results = results.lock().expect("results lock");
                        results.entry(req.request_id.clone()).or_insert(outcome);
                    }
                    None => break,
                }
            });
        }
    });
    results.into_inner().expect("results lock")
}
