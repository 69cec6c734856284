use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::prompt_hash;

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderError {
    /// Rate limiting, server errors, dropped connections. Worth retrying.
    Transient(String),
    Auth(String),
    Fatal(String),
}

impl std::fmt::Display for ProviderError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProviderError::Transient(m) => write!(f, "transient: {m}"),
            ProviderError::Auth(m) => write!(f, "auth: {m}"),
            ProviderError::Fatal(m) => write!(f, "fatal: {m}"),
        }
    }
}

/// A chat-completion endpoint.
pub trait ChatProvider: Send + Sync {
    fn id(&self) -> String;
    fn send(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

type Responder = Box<dyn Fn(&str) -> Option<String> + Send + Sync>;

/// Network-free provider. Replies are looked up by prompt hash, then by an
/// optional responder function, then fall back to a default reply.
pub struct MockProvider {
    replies: HashMap<String, String>,
    responder: Option<Responder>,
    default_reply: Option<String>,
    failures: Mutex<VecDeque<ProviderError>>,
    calls: AtomicUsize,
}

impl Default for MockProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl MockProvider {
    pub fn new() -> Self {
        MockProvider {
            replies: HashMap::new(),
            responder: None,
            default_reply: None,
            failures: Mutex::new(VecDeque::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_reply(mut self, prompt: &str, reply: impl Into<String>) -> Self {
        self.replies.insert(prompt_hash(prompt), reply.into());
        self
    }

    pub fn with_hashed_reply(mut self, hash: impl Into<String>, reply: impl Into<String>) -> Self {
        self.replies.insert(hash.into(), reply.into());
        self
    }

    pub fn with_responder<F>(mut self, f: F) -> Self
    where
        F: Fn(&str) -> Option<String> + Send + Sync + 'static,
    {
        self.responder = Some(Box::new(f));
        self
    }

    pub fn with_default(mut self, reply: impl Into<String>) -> Self {
        self.default_reply = Some(reply.into());
        self
    }

    /// Queues errors returned (in order) before any reply is served.
    pub fn fail_next(self, errors: impl IntoIterator<Item = ProviderError>) -> Self {
        self.failures.lock().expect("mock lock").extend(errors);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatProvider for MockProvider {
    fn id(&self) -> String {
        "mock".to_string()
    }

    fn send(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(err) = self.failures.lock().expect("mock lock").pop_front() {
            return Err(err);
        }
        if let Some(r) = self.replies.get(&prompt_hash(&request.prompt)) {
            return Ok(r.clone());
        }
        if let Some(r) = self.responder.as_ref().and_then(|f| f(&request.prompt)) {
            return Ok(r);
        }
        self.default_reply
            .clone()
            .ok_or_else(|| ProviderError::Fatal("mock provider has no reply for prompt".into()))
    }
}

/// OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpProvider {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpProvider {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent,
        }
    }
}

impl ChatProvider for HttpProvider {
    fn id(&self) -> String {
        self.base_url.clone()
    }

    fn send(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let body = json!({
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let url = format!("{}/chat/completions", self.base_url);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(classify)?;
        let parsed: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::Fatal(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Fatal("response has no content".into()))
    }
}

fn classify(err: ureq::Error) -> ProviderError {
    match err {
        ureq::Error::StatusCode(401) | ureq::Error::StatusCode(403) => {
            ProviderError::Auth(err.to_string())
        }
        ureq::Error::StatusCode(408) | ureq::Error::StatusCode(429) => {
            ProviderError::Transient(err.to_string())
        }
        ureq::Error::StatusCode(code) if code >= 500 => ProviderError::Transient(err.to_string()),
        ureq::Error::StatusCode(_) => ProviderError::Fatal(err.to_string()),
        ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed => {
            ProviderError::Transient(err.to_string())
        }
        other => ProviderError::Fatal(other.to_string()),
    }
}
