//! The single boundary for model calls.
//!
//! Every prompt in the engine goes through [`Gateway::complete`], which adds
//! retry with exponential backoff, a response cache for deterministic
//! purposes, an in-flight limit, and an optional request recorder for tests.
//! Backends only turn one request into one response.

mod live;
mod mock;

pub use live::{ChatCompletionsBackend, LiveConfig};
pub use mock::{FixtureEntry, Matcher, MockBackend, MockFailure};

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{digest_parts, sha256_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    GmTurn,
    PlayerTurn,
    RuleCheck,
    Summarize,
    Induce,
    Classify,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::GmTurn => "gm_turn",
            Purpose::PlayerTurn => "player_turn",
            Purpose::RuleCheck => "rule_check",
            Purpose::Summarize => "summarize",
            Purpose::Induce => "induce",
            Purpose::Classify => "classify",
        }
    }

    /// Responses for these purposes are cached by prompt content.
    pub fn is_cacheable(self) -> bool {
        matches!(self, Purpose::Summarize | Purpose::Classify)
    }

    fn default_sampling(self) -> Sampling {
        let (temperature, max_tokens) = match self {
            Purpose::RuleCheck | Purpose::Classify => (0.0, 200),
            Purpose::Summarize => (0.0, 200),
            Purpose::Induce => (0.3, 2000),
            Purpose::GmTurn | Purpose::PlayerTurn => (0.8, 600),
        };
        Sampling {
            temperature,
            max_tokens,
            seed: None,
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f32,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub template_id: String,
    pub filled_prompt: String,
    pub sampling: Sampling,
    pub purpose: Purpose,
}

impl OracleRequest {
    pub fn new(purpose: Purpose, template_id: impl Into<String>, filled_prompt: impl Into<String>) -> Self {
        Self {
            template_id: template_id.into(),
            filled_prompt: filled_prompt.into(),
            sampling: purpose.default_sampling(),
            purpose,
        }
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.sampling.seed = seed;
        self
    }

    pub fn prompt_hash(&self) -> String {
        sha256_hex(&self.filled_prompt)
    }

    fn cache_key(&self) -> String {
        digest_parts([self.purpose.as_str(), self.template_id.as_str(), self.filled_prompt.as_str()])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("backend refused the request: {0}")]
    Refusal(String),
    #[error("no fixture for {purpose} prompt {hash}")]
    NoFixture { purpose: Purpose, hash: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no model backend configured: {0}")]
    NotConfigured(String),
}

impl OracleError {
    pub fn is_refusal(&self) -> bool {
        matches!(self, OracleError::Refusal(_))
    }
}

/// Turns one request into one response. Retries and caching live in the
/// [`Gateway`].
pub trait Backend: Send + Sync {
    fn call(&self, req: &OracleRequest) -> Result<String, OracleError>;

    fn name(&self) -> &str;
}

/// Backend used when nothing is configured; every call fails.
#[derive(Debug, Clone)]
pub struct Unconfigured(pub String);

impl Backend for Unconfigured {
    fn call(&self, _req: &OracleRequest) -> Result<String, OracleError> {
        Err(OracleError::NotConfigured(self.0.clone()))
    }

    fn name(&self) -> &str {
        "unconfigured"
    }
}

#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        self.base_delay
            .saturating_mul(1u32 << attempt.min(16))
            .min(self.max_delay)
    }
}

/// Counting semaphore bounding concurrent backend calls.
struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

pub struct Gateway {
    backend: Arc<dyn Backend>,
    retry: RetryPolicy,
    limiter: Limiter,
    cache: Mutex<HashMap<String, String>>,
    backend_calls: AtomicU64,
    recorder: Option<Mutex<Vec<OracleRequest>>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.name())
            .field("max_in_flight", &self.limiter.max)
            .field("backend_calls", &self.backend_calls())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            limiter: Limiter::new(DEFAULT_MAX_IN_FLIGHT),
            cache: Mutex::new(HashMap::new()),
            backend_calls: AtomicU64::new(0),
            recorder: None,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_max_in_flight(mut self, max: usize) -> Self {
        self.limiter = Limiter::new(max);
        self
    }

    /// Keeps a copy of every request passed to [`Gateway::complete`].
    pub fn recording(mut self) -> Self {
        self.recorder = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn max_in_flight(&self) -> usize {
        self.limiter.max
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Number of requests that reached the backend, retries included.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn recorded(&self) -> Vec<OracleRequest> {
        self.recorder
            .as_ref()
            .map(|r| r.lock().unwrap().clone())
            .unwrap_or_default()
    }

    pub fn clear_recorded(&self) {
        if let Some(r) = &self.recorder {
            r.lock().unwrap().clear();
        }
    }

    /// Cached responses, sorted by key.
    pub fn cache_snapshot(&self) -> Vec<(String, String)> {
        let mut entries: Vec<_> = self
            .cache
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        entries.sort();
        entries
    }

    pub fn load_cache(&self, entries: impl IntoIterator<Item = (String, String)>) {
        self.cache.lock().unwrap().extend(entries);
    }

    pub fn complete(&self, req: &OracleRequest) -> Result<String, OracleError> {
        if req.filled_prompt.trim().is_empty() {
            return Err(OracleError::InvalidRequest("empty prompt".into()));
        }
        if let Some(r) = &self.recorder {
            r.lock().unwrap().push(req.clone());
        }
        let key = req.purpose.is_cacheable().then(|| req.cache_key());
        if let Some(hit) = key.as_ref().and_then(|k| self.cache.lock().unwrap().get(k).cloned()) {
            return Ok(hit);
        }

        let _permit = self.limiter.acquire();
        // a concurrent identical request may have finished while we waited
        if let Some(hit) = key.as_ref().and_then(|k| self.cache.lock().unwrap().get(k).cloned()) {
            return Ok(hit);
        }
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            self.backend_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.call(req) {
                Ok(text) => {
                    if let Some(k) = key {
                        self.cache.lock().unwrap().insert(k, text.clone());
                    }
                    return Ok(text);
                }
                Err(OracleError::Transient(msg)) => last = msg,
                Err(other) => return Err(other),
            }
        }
        Err(OracleError::Exhausted { attempts, last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Flaky {
        failures: AtomicUsize,
    }

    impl Backend for Flaky {
        fn call(&self, req: &OracleRequest) -> Result<String, OracleError> {
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(OracleError::Transient("503".into()));
            }
            Ok(format!("echo:{}", req.filled_prompt))
        }

        fn name(&self) -> &str {
            "flaky"
        }
    }

    fn flaky(failures: usize) -> Gateway {
        Gateway::new(Arc::new(Flaky {
            failures: AtomicUsize::new(failures),
        }))
        .with_retry(RetryPolicy::immediate(3))
    }

    #[test]
    fn retries_transient_failures() {
        let g = flaky(2);
        let r = OracleRequest::new(Purpose::GmTurn, "t", "hello");
        assert_eq!(g.complete(&r).unwrap(), "echo:hello");
        assert_eq!(g.backend_calls(), 3);
    }

    #[test]
    fn exhausts_after_configured_attempts() {
        let g = flaky(5);
        let r = OracleRequest::new(Purpose::GmTurn, "t", "hello");
        assert_eq!(
            g.complete(&r).unwrap_err(),
            OracleError::Exhausted {
                attempts: 3,
                last: "503".into()
            }
        );
        assert_eq!(g.backend_calls(), 3);
    }

    #[test]
    fn caches_only_deterministic_purposes() {
        let g = flaky(0);
        let c = OracleRequest::new(Purpose::Classify, "t", "state");
        g.complete(&c).unwrap();
        g.complete(&c).unwrap();
        assert_eq!(g.backend_calls(), 1);

        let p = OracleRequest::new(Purpose::PlayerTurn, "t", "state");
        g.complete(&p).unwrap();
        g.complete(&p).unwrap();
        assert_eq!(g.backend_calls(), 3);
    }

    #[test]
    fn cache_key_includes_template() {
        let g = flaky(0);
        g.complete(&OracleRequest::new(Purpose::Summarize, "a@1", "x")).unwrap();
        g.complete(&OracleRequest::new(Purpose::Summarize, "a@2", "x")).unwrap();
        assert_eq!(g.backend_calls(), 2);
        assert_eq!(g.cache_snapshot().len(), 2);

        let fresh = flaky(0);
        fresh.load_cache(g.cache_snapshot());
        fresh.complete(&OracleRequest::new(Purpose::Summarize, "a@1", "x")).unwrap();
        assert_eq!(fresh.backend_calls(), 0);
    }

    #[test]
    fn default_sampling_by_purpose() {
        assert_eq!(OracleRequest::new(Purpose::Classify, "t", "x").sampling.temperature, 0.0);
        assert_eq!(OracleRequest::new(Purpose::RuleCheck, "t", "x").sampling.temperature, 0.0);
        assert!(OracleRequest::new(Purpose::GmTurn, "t", "x").sampling.temperature > 0.0);
    }

    #[test]
    fn rejects_empty_prompt_and_records() {
        let g = flaky(0).recording();
        assert!(matches!(
            g.complete(&OracleRequest::new(Purpose::GmTurn, "t", "  ")),
            Err(OracleError::InvalidRequest(_))
        ));
        g.complete(&OracleRequest::new(Purpose::GmTurn, "t", "a")).unwrap();
        assert_eq!(g.recorded().len(), 1);
        assert_eq!(g.backend_calls(), 1);
    }

    #[test]
    fn in_flight_limit_holds() {
        struct Slow {
            now: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Backend for Slow {
            fn call(&self, _req: &OracleRequest) -> Result<String, OracleError> {
                let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(n, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(10));
                self.now.fetch_sub(1, Ordering::SeqCst);
                Ok(String::new())
            }
            fn name(&self) -> &str {
                "slow"
            }
        }
        let backend = Arc::new(Slow {
            now: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let g = Gateway::new(backend.clone()).with_max_in_flight(2);
        std::thread::scope(|s| {
            for i in 0..8 {
                let g = &g;
                s.spawn(move || {
                    g.complete(&OracleRequest::new(Purpose::GmTurn, "t", format!("p{i}")))
                        .unwrap()
                });
            }
        });
        assert!(backend.peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn unconfigured_backend_fails_without_retry() {
        let g = Gateway::new(Arc::new(Unconfigured("set STORYLOOM_LLM_ENDPOINT".into())));
        assert!(matches!(
            g.complete(&OracleRequest::new(Purpose::GmTurn, "t", "x")),
            Err(OracleError::NotConfigured(_))
        ));
        assert_eq!(g.backend_calls(), 1);
    }
}
