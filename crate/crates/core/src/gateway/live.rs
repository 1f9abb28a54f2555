use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{estimate_tokens, ChatProvider, ModelRequest, ModelResponse, ProviderError, Role};

pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// Speaks the OpenAI-compatible `/chat/completions` wire format.
pub struct OpenAiCompatProvider {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
}

impl OpenAiCompatProvider {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        OpenAiCompatProvider {
            agent: ureq::Agent::new_with_config(config),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
        }
    }

    /// Reads `PROVIDER_API_KEY` (required) and `PROVIDER_BASE_URL`.
    pub fn from_env() -> Result<Self, String> {
        let key = std::env::var("PROVIDER_API_KEY")
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or("PROVIDER_API_KEY is not set; use --replay or --offline to run without a provider")?;
        let base = std::env::var("PROVIDER_BASE_URL").unwrap_or_else(|_| DEFAULT_BASE_URL.into());
        Ok(OpenAiCompatProvider::new(base, key, Duration::from_secs(120)))
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBody {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

fn looks_like_context_overflow(body: &str) -> bool {
    let lc = body.to_ascii_lowercase();
    lc.contains("context_length_exceeded") || lc.contains("maximum context length") || lc.contains("too many tokens")
}

impl ChatProvider for OpenAiCompatProvider {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        let messages: Vec<_> = request
            .messages
            .iter()
            .map(|m| {
                json!({
                    "role": match m.role { Role::System => "system", Role::User => "user" },
                    "content": m.content,
                })
            })
            .collect();
        let body = json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
        .to_string();

        let started = Instant::now();
        let result = self
            .agent
            .post(&format!("{}/chat/completions", self.base_url))
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body);
        let mut resp = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(ProviderError::Timeout),
            Err(e) => return Err(ProviderError::Network(e.to_string())),
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Err(ProviderError::Timeout),
            Err(e) => return Err(ProviderError::Network(e.to_string())),
        };
        let latency_ms = started.elapsed().as_millis() as u64;

        match status {
            200..=299 => {}
            401 | 403 => return Err(ProviderError::Auth(format!("HTTP {status}"))),
            429 => return Err(ProviderError::RateLimited { retry_after }),
            408 | 504 => return Err(ProviderError::Timeout),
            413 => return Err(ProviderError::RequestTooLarge(format!("HTTP {status}"))),
            400 if looks_like_context_overflow(&text) => {
                return Err(ProviderError::RequestTooLarge(truncate(&text, 200)))
            }
            500..=599 => {
                return Err(ProviderError::Server {
                    status,
                    message: truncate(&text, 200),
                })
            }
            _ => {
                return Err(ProviderError::Network(format!(
                    "unexpected HTTP {status}: {}",
                    truncate(&text, 200)
                )))
            }
        }

        let parsed: CompletionBody =
            serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(e.to_string()))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Malformed("response has no message content".into()))?;
        let usage = parsed.usage.as_ref();
        Ok(ModelResponse {
            tokens_in: usage
                .and_then(|u| u.prompt_tokens)
                .unwrap_or_else(|| estimate_tokens(request.prompt_chars())),
            tokens_out: usage
                .and_then(|u| u.completion_tokens)
                .unwrap_or_else(|| estimate_tokens(content.chars().count())),
            text: content,
            latency_ms,
            attempts: 1,
        })
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}
