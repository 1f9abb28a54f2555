use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{messages_hash, ChatProvider, Message, ModelRequest, ModelResponse, ProviderError};

pub const STUB_FALLBACK: &str = "[]";

/// Canned responses keyed by [`messages_hash`]; unknown requests get the
/// fallback text.
#[derive(Debug)]
pub struct StubProvider {
    responses: HashMap<String, String>,
    fallback: String,
    calls: AtomicUsize,
}

impl Default for StubProvider {
    fn default() -> Self {
        StubProvider::new(STUB_FALLBACK)
    }
}

impl StubProvider {
    pub fn new(fallback: impl Into<String>) -> Self {
        StubProvider {
            responses: HashMap::new(),
            fallback: fallback.into(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_response(mut self, messages: &[Message], text: impl Into<String>) -> Self {
        self.responses.insert(messages_hash(messages), text.into());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for StubProvider {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = self
            .responses
            .get(&messages_hash(&request.messages))
            .unwrap_or(&self.fallback);
        Ok(ModelResponse::estimated(request, text.clone()))
    }
}

/// Returns scripted results in order, then the stub fallback.
#[derive(Debug)]
pub struct ScriptedProvider {
    script: Mutex<VecDeque<Result<String, ProviderError>>>,
    calls: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new(script: Vec<Result<String, ProviderError>>) -> Self {
        ScriptedProvider {
            script: Mutex::new(script.into()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let next = self.script.lock().unwrap().pop_front();
        match next {
            Some(Ok(text)) => Ok(ModelResponse::estimated(request, text)),
            Some(Err(e)) => Err(e),
            None => Ok(ModelResponse::estimated(request, STUB_FALLBACK)),
        }
    }
}

/// Always fails with the same error.
#[derive(Debug)]
pub struct FailingProvider {
    error: ProviderError,
    calls: AtomicUsize,
}

impl FailingProvider {
    pub fn new(error: ProviderError) -> Self {
        FailingProvider {
            error,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for FailingProvider {
    fn complete(&self, _request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(self.error.clone())
    }
}

/// Delegates to a closure.
pub struct FnProvider<F>(pub F);

impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&ModelRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        (self.0)(request).map(|text| ModelResponse::estimated(request, text))
    }
}
