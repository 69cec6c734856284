//! The single point of contact with chat-completion APIs.
//!
//! Owns the prompt templates, retry with exponential backoff, a
//! requests-per-minute ceiling, a bound on in-flight requests, and the
//! audit log. Every exchange is appended to the audit log before its reply
//! is handed back to the caller.

mod provider;
mod template;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use provider::{ChatProvider, ChatRequest, HttpProvider, MockProvider, ProviderError};
pub use template::{Bindings, PromptTemplate, TemplateName};

use crate::error::{Error, Result};

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    /// `"http"` for an OpenAI-compatible endpoint, `"mock"` for canned replies.
    pub provider: String,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub max_tokens: u32,
    pub rpm: u32,
    pub max_parallel: usize,
    pub max_retries: usize,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
    pub timeout_secs: u64,
    pub audit_log: Option<PathBuf>,
    /// Line-delimited `{"hash": ..., "reply": ...}` records for the mock provider.
    pub mock_replies: Option<PathBuf>,
    pub mock_default: Option<String>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            provider: "http".to_string(),
            base_url: "https://api.openai.com/v1".to_string(),
            model: "gpt-4o-mini".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            max_tokens: 512,
            rpm: 500,
            max_parallel: 8,
            max_retries: 5,
            backoff_base_ms: 500,
            backoff_cap_ms: 30_000,
            timeout_secs: 60,
            audit_log: None,
            mock_replies: None,
            mock_default: None,
        }
    }
}

/// One request/response round trip, retained verbatim for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub provider: String,
    pub model: String,
    pub template: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub reply: String,
    pub latency_ms: u64,
    pub retries: usize,
}

struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn new(rpm: u32) -> Self {
        let interval = if rpm == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(60.0 / rpm as f64)
        };
        RateLimiter {
            interval,
            next: Mutex::new(None),
        }
    }

    fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next.lock().expect("rate limiter lock");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    config: GatewayConfig,
    limiter: RateLimiter,
    slots: Slots,
    audit: Mutex<Option<BufWriter<File>>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.id())
            .field("model", &self.config.model)
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>, config: GatewayConfig) -> Result<Self> {
        let audit = match &config.audit_log {
            Some(path) => Some(BufWriter::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?,
            )),
            None => None,
        };
        Ok(Gateway {
            limiter: RateLimiter::new(config.rpm),
            slots: Slots {
                free: Mutex::new(config.max_parallel.max(1)),
                cv: Condvar::new(),
            },
            provider,
            config,
            audit: Mutex::new(audit),
        })
    }

    /// Builds the provider named in the config.
    pub fn from_config(config: GatewayConfig) -> Result<Self> {
        let provider: Arc<dyn ChatProvider> = match config.provider.as_str() {
            "mock" => {
                let mut mock = MockProvider::new();
                if let Some(path) = &config.mock_replies {
                    for (hash, reply) in load_mock_replies(path)? {
                        mock = mock.with_hashed_reply(hash, reply);
                    }
                }
                if let Some(d) = &config.mock_default {
                    mock = mock.with_default(d.clone());
                }
                Arc::new(mock)
            }
            "http" => {
                let key = std::env::var(&config.api_key_env).ok();
                Arc::new(HttpProvider::new(
                    config.base_url.clone(),
                    key,
                    Duration::from_secs(config.timeout_secs),
                ))
            }
            other => return Err(Error::Config(format!("unknown llm provider {other:?}"))),
        };
        Gateway::new(provider, config)
    }

    pub fn provider_id(&self) -> String {
        format!("{}:{}", self.provider.id(), self.config.model)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Renders `template` and sends it. Placeholder errors surface before
    /// any network traffic.
    pub fn complete(&self, template: &PromptTemplate, bindings: &Bindings) -> Result<String> {
        let prompt = template.render(bindings)?;
        self.complete_prompt(template.name, &prompt, template.temperature)
    }

    pub fn complete_prompt(
        &self,
        name: TemplateName,
        prompt: &str,
        temperature: f64,
    ) -> Result<String> {
        self.exchange(name, prompt, temperature).map(|x| x.reply)
    }

    pub fn exchange(&self, name: TemplateName, prompt: &str, temperature: f64) -> Result<ChatExchange> {
        let request = ChatRequest {
            model: self.config.model.clone(),
            prompt: prompt.to_string(),
            temperature,
            max_tokens: self.config.max_tokens,
        };
        let _slot = self.slots.acquire();
        let started = Instant::now();
        let mut retries = 0;
        let reply = loop {
            self.limiter.acquire();
            match self.provider.send(&request) {
                Ok(reply) => break reply,
                Err(ProviderError::Transient(msg)) => {
                    if retries >= self.config.max_retries {
                        return Err(Error::BackendUnavailable {
                            retries,
                            message: msg,
                        });
                    }
                    let backoff = self
                        .config
                        .backoff_base_ms
                        .saturating_mul(1u64 << retries.min(20))
                        .min(self.config.backoff_cap_ms);
                    log::warn!("transient llm failure ({msg}); retry {} in {backoff} ms", retries + 1);
                    std::thread::sleep(Duration::from_millis(backoff));
                    retries += 1;
                }
                Err(ProviderError::Auth(msg)) => return Err(Error::Authentication(msg)),
                Err(ProviderError::Fatal(msg)) => return Err(Error::Backend(msg)),
            }
        };
        let exchange = ChatExchange {
            provider: self.provider.id(),
            model: request.model,
            template: name.as_str().to_string(),
            prompt: request.prompt,
            temperature,
            max_tokens: request.max_tokens,
            reply,
            latency_ms: started.elapsed().as_millis() as u64,
            retries,
        };
        self.audit(&exchange)?;
        Ok(exchange)
    }

    fn audit(&self, exchange: &ChatExchange) -> Result<()> {
        let mut guard = self.audit.lock().expect("audit lock");
        if let Some(w) = guard.as_mut() {
            let path = self.config.audit_log.clone().unwrap_or_default();
            serde_json::to_writer(&mut *w, exchange)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct MockRecord {
    hash: String,
    reply: String,
}

fn load_mock_replies(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: MockRecord = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((rec.hash, rec.reply));
    }
    Ok(out)
}

/// Extracts up to `max` predicate lines from a discretizer reply.
///
/// List markers (`1.`, `2)`, `-`, `*`) and surrounding quotes are stripped;
/// duplicates are removed by case-insensitive comparison.
pub fn parse_candidates(reply: &str, max: usize) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    for line in reply.lines() {
        let text = strip_marker(line.trim());
        let text = text
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c.is_whitespace())
            .trim();
        if text.is_empty() {
            continue;
        }
        let key = text.to_lowercase();
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        out.push(text.to_string());
        if out.len() == max {
            break;
        }
    }
    if out.is_empty() {
        return Err(Error::NoCandidates);
    }
    Ok(out)
}

fn strip_marker(line: &str) -> &str {
    if let Some(rest) = line.strip_prefix(['-', '*', '•']) {
        return rest.trim_start();
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix(['.', ')', ':']) {
            return r.trim_start();
        }
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_config() -> GatewayConfig {
        GatewayConfig {
            provider: "mock".into(),
            rpm: 0,
            backoff_base_ms: 0,
            max_retries: 3,
            ..GatewayConfig::default()
        }
    }

    fn denotation_bindings() -> Bindings {
        [("predicate", "is about sports"), ("sample", "I love soccer.")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn mock_returns_registered_reply() {
        let t = PromptTemplate::denotation();
        let prompt = t.render(&denotation_bindings()).unwrap();
        let mock = Arc::new(MockProvider::new().with_reply(&prompt, "yes"));
        let gw = Gateway::new(mock.clone(), quick_config()).unwrap();
        assert_eq!(gw.complete(&t, &denotation_bindings()).unwrap(), "yes");
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn unbound_placeholder_never_reaches_provider() {
        let mock = Arc::new(MockProvider::new().with_default("x"));
        let gw = Gateway::new(mock.clone(), quick_config()).unwrap();
        let mut b = Bindings::new();
        b.insert("steering".into(), String::new());
        b.insert("count".into(), "5".into());
        let err = gw.complete(&PromptTemplate::discretizer(), &b).unwrap_err();
        assert!(matches!(err, Error::UnboundPlaceholder { .. }));
        assert_eq!(mock.calls(), 0);
    }

    #[test]
    fn transient_failure_is_retried_once() {
        let mock = Arc::new(
            MockProvider::new()
                .with_default("no")
                .fail_next([ProviderError::Transient("429 Too Many Requests".into())]),
        );
        let gw = Gateway::new(mock.clone(), quick_config()).unwrap();
        let x = gw
            .exchange(TemplateName::Denotation, "prompt", 0.0)
            .unwrap();
        assert_eq!(x.reply, "no");
        assert_eq!(x.retries, 1);
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn retries_are_capped() {
        let mock = Arc::new(MockProvider::new().with_default("no").fail_next(
            std::iter::repeat(ProviderError::Transient("503".into())).take(10),
        ));
        let gw = Gateway::new(mock.clone(), quick_config()).unwrap();
        let err = gw.exchange(TemplateName::Denotation, "p", 0.0).unwrap_err();
        assert!(matches!(err, Error::BackendUnavailable { retries: 3, .. }));
        assert_eq!(mock.calls(), 4);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let mock = Arc::new(
            MockProvider::new()
                .with_default("no")
                .fail_next([ProviderError::Auth("401".into())]),
        );
        let gw = Gateway::new(mock.clone(), quick_config()).unwrap();
        assert!(matches!(
            gw.exchange(TemplateName::Denotation, "p", 0.0),
            Err(Error::Authentication(_))
        ));
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn audit_log_records_exchange() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("audit.jsonl");
        let cfg = GatewayConfig {
            audit_log: Some(log.clone()),
            ..quick_config()
        };
        let gw = Gateway::new(Arc::new(MockProvider::new().with_default("YES")), cfg).unwrap();
        gw.complete_prompt(TemplateName::Denotation, "hello", 0.0).unwrap();
        let text = std::fs::read_to_string(&log).unwrap();
        let x: ChatExchange = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(x.prompt, "hello");
        assert_eq!(x.reply, "YES");
        assert_eq!(x.template, "denotation");
    }

    #[test]
    fn candidates_truncate_to_max() {
        let reply = "1. a\n2. b\n3. c\n4. d\n5. e\n6. f\n7. g\n";
        assert_eq!(parse_candidates(reply, 5).unwrap(), ["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn candidates_dedup_case_insensitive() {
        let reply = "1. Discusses sports\n2. discusses sports\n3. DISCUSSES SPORTS\n";
        assert_eq!(parse_candidates(reply, 5).unwrap(), ["Discusses sports"]);
    }

    #[test]
    fn empty_reply_has_no_candidates() {
        assert!(matches!(parse_candidates("", 5), Err(Error::NoCandidates)));
        assert!(matches!(parse_candidates("\n  \n", 5), Err(Error::NoCandidates)));
    }

    #[test]
    fn strips_list_markers_and_quotes() {
        let reply = "- \"is in French\"\n* mentions a city\n3) uses formal tone";
        assert_eq!(
            parse_candidates(reply, 10).unwrap(),
            ["is in French", "mentions a city", "uses formal tone"]
        );
    }
}
