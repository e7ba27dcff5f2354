//! Chat and embedding clients over the chat-completion wire protocol, a
//! deterministic mock model and a content-addressed response cache.

mod cache;
mod embed;
mod http;
mod limiter;
mod mock;
mod types;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

pub use cache::{cache_key, cache_key_json, canonical_json, CacheEntry, ResponseCache};
pub use embed::{Embedder, HashingEmbedder, OrthogonalEmbedder};
pub use http::{HttpChat, HttpEmbedder};
pub use limiter::{Limiter, Permit};
pub use mock::{
    candidate_scope, question_of, MockBackend, MockRule, NeedleSource, TABLE_END, TABLE_START,
};
pub use types::{ChatRequest, Message, Role, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<LlmError> },
    #[error("cache: {0}")]
    Cache(String),
    #[error("configuration: {0}")]
    Config(String),
}

impl LlmError {
    pub fn is_retriable(&self) -> bool {
        match self {
            LlmError::Transport(_) => true,
            LlmError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Raw transport: one call, no caching or retry.
pub trait Backend: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ClientStats {
    pub requests: u64,
    pub cache_hits: u64,
    /// Backend attempts, retries included.
    pub wire_calls: u64,
    pub failures: u64,
}

impl ClientStats {
    pub fn cache_hit_rate(&self) -> f64 {
        if self.requests == 0 {
            0.0
        } else {
            self.cache_hits as f64 / self.requests as f64
        }
    }
}

pub trait ChatClient: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError>;
    fn stats(&self) -> ClientStats;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn immediate() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::ZERO,
        }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(retry)
    }
}

/// Backend wrapped with the cache, an in-flight limit and retries.
/// Only temperature-0 requests are cached.
pub struct LlmClient<B> {
    backend: B,
    model: String,
    cache: Option<Arc<ResponseCache>>,
    limiter: Limiter,
    retry: RetryPolicy,
    requests: AtomicU64,
    hits: AtomicU64,
    wire: AtomicU64,
    failures: AtomicU64,
}

impl<B: Backend> LlmClient<B> {
    pub fn new(backend: B, model: impl Into<String>) -> Self {
        LlmClient {
            backend,
            model: model.into(),
            cache: None,
            limiter: Limiter::new(4),
            retry: RetryPolicy::default(),
            requests: AtomicU64::new(0),
            hits: AtomicU64::new(0),
            wire: AtomicU64::new(0),
            failures: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_limit(mut self, in_flight: usize) -> Self {
        self.limiter = Limiter::new(in_flight);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn request(&self, messages: Vec<Message>) -> ChatRequest {
        ChatRequest::new(self.model.clone(), messages)
    }

    fn send_with_retry(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let _permit = self.limiter.acquire();
        let mut attempt = 0;
        loop {
            self.wire.fetch_add(1, Ordering::Relaxed);
            match self.backend.send(req) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retriable() && attempt < self.retry.max_retries => {
                    log::warn!("attempt {} failed: {e}; retrying", attempt + 1);
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                }
                Err(e) if e.is_retriable() => {
                    return Err(LlmError::Exhausted {
                        attempts: attempt + 1,
                        last: Box::new(e),
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
}

impl<B: Backend> ChatClient for LlmClient<B> {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        req.validate()?;
        self.requests.fetch_add(1, Ordering::Relaxed);
        let cache = self.cache.as_ref().filter(|_| req.is_deterministic());
        let key = cache.map(|_| cache_key(req));
        if let (Some(c), Some(k)) = (cache, &key) {
            if let Some(entry) = c.get(k) {
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(entry.response);
            }
        }
        let out = self.send_with_retry(req);
        match &out {
            Ok(text) => {
                if let (Some(c), Some(k)) = (cache, &key) {
                    c.put(k, req, text)?;
                }
            }
            Err(_) => {
                self.failures.fetch_add(1, Ordering::Relaxed);
            }
        }
        out
    }

    fn stats(&self) -> ClientStats {
        ClientStats {
            requests: self.requests.load(Ordering::Relaxed),
            cache_hits: self.hits.load(Ordering::Relaxed),
            wire_calls: self.wire.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
        }
    }
}

/// Endpoint settings read from `LLM_ENDPOINT`, `LLM_API_KEY`, `LLM_MODEL`,
/// `EMBED_ENDPOINT`, `EMBED_MODEL` and `CACHE_DIR`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EnvConfig {
    pub llm_endpoint: Option<String>,
    pub llm_api_key: Option<String>,
    pub llm_model: Option<String>,
    pub embed_endpoint: Option<String>,
    pub embed_model: Option<String>,
    pub cache_dir: Option<String>,
}

impl EnvConfig {
    pub fn from_env() -> Self {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Self {
        let get = |k: &str| get(k).filter(|v| !v.is_empty());
        EnvConfig {
            llm_endpoint: get("LLM_ENDPOINT"),
            llm_api_key: get("LLM_API_KEY"),
            llm_model: get("LLM_MODEL"),
            embed_endpoint: get("EMBED_ENDPOINT"),
            embed_model: get("EMBED_MODEL"),
            cache_dir: get("CACHE_DIR"),
        }
    }

    pub fn chat_backend(&self) -> Result<HttpChat, LlmError> {
        let endpoint = self
            .llm_endpoint
            .as_deref()
            .ok_or_else(|| LlmError::Config("LLM_ENDPOINT is not set".into()))?;
        HttpChat::new(endpoint, self.llm_api_key.clone())
    }

    pub fn embedder(&self) -> Result<Option<HttpEmbedder>, LlmError> {
        match &self.embed_endpoint {
            None => Ok(None),
            Some(e) => {
                let model = self.embed_model.as_deref().unwrap_or("default");
                Ok(Some(HttpEmbedder::new(e, model, self.llm_api_key.clone())?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn ask(user: &str) -> ChatRequest {
        ChatRequest::new("m", vec![Message::system("sys"), Message::user(user)])
    }

    struct Flaky {
        fail_first: u32,
        seen: Mutex<u32>,
        error: LlmError,
    }

    impl Backend for Flaky {
        fn send(&self, _: &ChatRequest) -> Result<String, LlmError> {
            let mut n = self.seen.lock().unwrap();
            *n += 1;
            if *n <= self.fail_first {
                Err(self.error.clone())
            } else {
                Ok("ok".into())
            }
        }
    }

    fn flaky(fail_first: u32, error: LlmError) -> LlmClient<Flaky> {
        LlmClient::new(
            Flaky {
                fail_first,
                seen: Mutex::new(0),
                error,
            },
            "m",
        )
        .with_retry(RetryPolicy::immediate())
    }

    #[test]
    fn fixed_reply() {
        let c = LlmClient::new(
            MockBackend::new(MockRule::FixedReply("gender: M".into())),
            "m",
        );
        assert_eq!(c.complete(&ask("anything")).unwrap(), "gender: M");
        assert_eq!(c.complete(&ask("else")).unwrap(), "gender: M");
    }

    #[test]
    fn needle_rule() {
        let rule = MockRule::needle("sepsis");
        assert_eq!(
            rule.reply(&ask("Patient: The primary_disease is SEPSIS.\nQuestion: q")),
            "yes"
        );
        assert_eq!(
            rule.reply(&ask(
                "Patient: The primary_disease is STROKE.\nQuestion: sepsis?"
            )),
            "no"
        );
    }

    #[test]
    fn needle_tokens_must_be_contiguous() {
        let rule = MockRule::needle("white blood cells");
        assert_eq!(
            rule.reply(&ask(
                "Patient: The label is White Blood Cells.\nQuestion: q"
            )),
            "yes"
        );
        assert_eq!(
            rule.reply(&ask(
                "Patient: The label is White, Cells Blood.\nQuestion: q"
            )),
            "no"
        );
    }

    #[test]
    fn echo_between_markers() {
        let rule = MockRule::echo();
        let user = format!("x {TABLE_START}\nPatient 1. The gender is M.\n{TABLE_END} y");
        assert_eq!(rule.reply(&ask(&user)), "Patient 1. The gender is M.");
        assert_eq!(
            MockRule::FirstNSentences(1).reply(&ask(&user)),
            "Patient 1."
        );
    }

    #[test]
    fn cache_serves_repeats() {
        let cache = Arc::new(ResponseCache::memory());
        let c = LlmClient::new(MockBackend::new(MockRule::FixedReply("a".into())), "m")
            .with_cache(cache);
        c.complete(&ask("q")).unwrap();
        c.complete(&ask("q")).unwrap();
        let s = c.stats();
        assert_eq!((s.requests, s.cache_hits, s.wire_calls), (2, 1, 1));
    }

    #[test]
    fn warm_temperature_bypasses_cache() {
        let cache = Arc::new(ResponseCache::memory());
        let c = LlmClient::new(MockBackend::new(MockRule::FixedReply("a".into())), "m")
            .with_cache(cache.clone());
        let mut req = ask("q");
        req.temperature = 0.7;
        c.complete(&req).unwrap();
        c.complete(&req).unwrap();
        assert_eq!(c.stats().wire_calls, 2);
        assert!(cache.is_empty());
    }

    #[test]
    fn retries_until_success() {
        let c = flaky(3, LlmError::Transport("reset".into()));
        assert_eq!(c.complete(&ask("q")).unwrap(), "ok");
        assert_eq!(c.stats().wire_calls, 4);
    }

    #[test]
    fn retry_bound_is_four_attempts() {
        let c = flaky(
            10,
            LlmError::Status {
                status: 503,
                body: "busy".into(),
            },
        );
        match c.complete(&ask("q")).unwrap_err() {
            LlmError::Exhausted { attempts, .. } => assert_eq!(attempts, 4),
            e => panic!("{e}"),
        }
        assert_eq!(c.stats().wire_calls, 4);
        assert_eq!(c.stats().failures, 1);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let c = flaky(
            10,
            LlmError::Status {
                status: 400,
                body: "bad".into(),
            },
        );
        assert!(matches!(
            c.complete(&ask("q")),
            Err(LlmError::Status { status: 400, .. })
        ));
        assert_eq!(c.stats().wire_calls, 1);
    }

    #[test]
    fn invalid_requests_rejected() {
        let c = LlmClient::new(MockBackend::new(MockRule::FixedReply("a".into())), "m");
        assert!(c.complete(&ChatRequest::new("m", vec![])).is_err());
        let mut req = ask("q");
        req.temperature = -1.0;
        assert!(c.complete(&req).is_err());
    }

    #[test]
    fn cache_key_is_canonical() {
        let a = r#"{"model":"m","temperature":0.0,"max_tokens":256,"messages":[{"role":"user","content":"hi"}]}"#;
        let b = r#"{ "messages": [ {"content":"hi", "role":"user"} ], "max_tokens":256, "temperature":0.0, "model":"m" }"#;
        assert_eq!(cache_key_json(a).unwrap(), cache_key_json(b).unwrap());
        let c = r#"{"model":"m","temperature":0.0,"max_tokens":256,"messages":[{"role":"user","content":"hI"}]}"#;
        assert_ne!(cache_key_json(a).unwrap(), cache_key_json(c).unwrap());
        let req = ChatRequest::new("m", vec![Message::user("hi")]);
        let k = cache_key(&req);
        assert_eq!(k, cache_key_json(a).unwrap());
        assert_eq!(k.len(), 64);
        assert!(k
            .chars()
            .all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase()));
    }

    #[test]
    fn dir_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::dir(dir.path()).unwrap();
        let req = ask("q");
        let key = cache_key(&req);
        cache.put(&key, &req, "answer").unwrap();
        let file = dir.path().join(format!("{key}.json"));
        let v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(file).unwrap()).unwrap();
        assert_eq!(v["response"], "answer");
        assert!(v["created_at"].is_string());
        assert_eq!(v["request"]["model"], "m");
        assert_eq!(cache.get(&key).unwrap().response, "answer");
        assert_eq!(cache.len(), 1);
    }

    #[test]
    fn hashing_embedder_contracts() {
        let e = HashingEmbedder::default();
        assert_eq!(e.vector("a a"), e.vector("a"));
        let norm: f64 = e
            .vector("hello world")
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn env_lookup() {
        let cfg = EnvConfig::from_lookup(|k| match k {
            "LLM_ENDPOINT" => Some("http://localhost:8000".into()),
            "CACHE_DIR" => Some(String::new()),
            _ => None,
        });
        assert_eq!(cfg.llm_endpoint.as_deref(), Some("http://localhost:8000"));
        assert_eq!(cfg.cache_dir, None);
        assert!(EnvConfig::default().chat_backend().is_err());
    }
}
