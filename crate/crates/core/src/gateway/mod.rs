//! Provider-agnostic chat completion with retry, usage accounting and
//! record/replay.

mod cost;
mod heuristic;
mod live;
mod retry;
mod stub;
mod transcript;

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::Clock;

pub use cost::{estimate_cost, CostEstimate, ModelPrice, PriceTable};
pub use heuristic::HeuristicProvider;
pub use live::{OpenAiCompatProvider, DEFAULT_BASE_URL};
pub use retry::{with_retry, GatewayError, RetryPolicy};
pub use stub::{FailingProvider, FnProvider, ScriptedProvider, StubProvider, STUB_FALLBACK};
pub use transcript::{RecordingProvider, ReplayProvider, TranscriptEntry, TranscriptError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;

impl ModelRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<Message>) -> Self {
        ModelRequest {
            model_id: model_id.into(),
            messages,
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: &str| Err(ProviderError::InvalidRequest(m.to_string()));
        if self.messages.is_empty() {
            return bad("messages must be nonempty");
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return bad("message contents must be nonempty");
        }
        if self.messages.iter().skip(1).any(|m| m.role == Role::System) {
            return bad("only the first message may be a system message");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must be within [0, 2]");
        }
        Ok(())
    }

    pub fn prompt_chars(&self) -> usize {
        self.messages.iter().map(|m| m.content.chars().count()).sum()
    }
}

/// SHA-256 over the whole request; keys transcript entries.
pub fn request_hash(req: &ModelRequest) -> String {
    let bytes = serde_json::to_vec(req).expect("request serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// SHA-256 over the messages only; keys [`StubProvider`] responses.
pub fn messages_hash(messages: &[Message]) -> String {
    let bytes = serde_json::to_vec(messages).expect("messages serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// Token estimate used when a provider reports no usage: ceil(chars / 4).
pub fn estimate_tokens(chars: usize) -> u64 {
    chars.div_ceil(4) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub latency_ms: u64,
    pub attempts: u32,
}

impl ModelResponse {
    /// A response with usage estimated from character counts.
    pub fn estimated(req: &ModelRequest, text: impl Into<String>) -> Self {
        let text = text.into();
        ModelResponse {
            tokens_in: estimate_tokens(req.prompt_chars()),
            tokens_out: estimate_tokens(text.chars().count()),
            text,
            latency_ms: 0,
            attempts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited{}", retry_after.map(|d| format!(" (retry after {}s)", d.as_secs())).unwrap_or_default())]
    RateLimited { retry_after: Option<Duration> },
    #[error("request timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("request too large: {0}")]
    RequestTooLarge(String),
    #[error("network failure: {0}")]
    Network(String),
    #[error("provider server error {status}: {message}")]
    Server { status: u16, message: String },
    #[error("replay miss: no transcript entry for request hash {0}")]
    ReplayMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// How the retry loop treats an error class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetryClass {
    Never,
    Once,
    Always,
}

impl ProviderError {
    pub fn retry_class(&self) -> RetryClass {
        match self {
            ProviderError::RateLimited { .. }
            | ProviderError::Timeout
            | ProviderError::Network(_)
            | ProviderError::Server { .. } => RetryClass::Always,
            ProviderError::Malformed(_) => RetryClass::Once,
            ProviderError::Auth(_)
            | ProviderError::RequestTooLarge(_)
            | ProviderError::ReplayMiss(_)
            | ProviderError::InvalidRequest(_) => RetryClass::Never,
        }
    }

    pub fn retry_after(&self) -> Option<Duration> {
        match self {
            ProviderError::RateLimited { retry_after } => *retry_after,
            _ => None,
        }
    }
}

/// One attempt against a model provider. Implementations must be safe to
/// call concurrently.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for Arc<P> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        (**self).complete(request)
    }
}

/// Accumulated provider usage for one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Usage {
    pub calls: u64,
    pub failures: u64,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub retries: u64,
}

/// Per-run front end over a [`ChatProvider`]: applies the retry policy and
/// meters usage.
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    clock: Arc<dyn Clock>,
    policy: RetryPolicy,
    model_id: String,
    usage: Mutex<Usage>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("model_id", &self.model_id)
            .field("policy", &self.policy)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(
        provider: Arc<dyn ChatProvider>,
        clock: Arc<dyn Clock>,
        policy: RetryPolicy,
        model_id: impl Into<String>,
    ) -> Self {
        Gateway {
            provider,
            clock,
            policy,
            model_id: model_id.into(),
            usage: Mutex::new(Usage::default()),
        }
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn complete(
        &self,
        messages: Vec<Message>,
        max_output_tokens: u32,
    ) -> Result<ModelResponse, GatewayError> {
        let mut request = ModelRequest::new(self.model_id.clone(), messages);
        request.max_output_tokens = max_output_tokens;
        self.complete_request(&request)
    }

    pub fn complete_request(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let result = match request.validate() {
            Ok(()) => with_retry(|| self.provider.complete(request), &self.policy, &*self.clock),
            Err(e) => Err(GatewayError {
                attempts: 0,
                exhausted: false,
                last: e,
            }),
        };
        let mut usage = self.usage.lock().unwrap();
        usage.calls += 1;
        match &result {
            Ok(r) => {
                usage.tokens_in += r.tokens_in;
                usage.tokens_out += r.tokens_out;
                usage.retries += u64::from(r.attempts.saturating_sub(1));
            }
            Err(e) => {
                usage.failures += 1;
                usage.retries += u64::from(e.attempts.saturating_sub(1));
            }
        }
        result
    }

    pub fn usage(&self) -> Usage {
        self.usage.lock().unwrap().clone()
    }
}
