//! Uniform access to language-model services: continuation log-prob
//! scoring and chat completions, with an on-disk response cache, bounded
//! in-flight requests, and a deterministic offline backend.

mod cache;
mod deterministic;
mod http;
pub mod stub;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PirError, Result};

pub use cache::DiskCache;
pub use deterministic::DeterministicBackend;
pub use http::{HttpChatBackend, HttpScoreBackend};

/// A scoring request: everything conditioned on, plus the continuation
/// whose per-token log-probs are wanted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub context: String,
    pub continuation: String,
}

/// Per-token natural-log probabilities for a continuation. The token
/// strings concatenate back to the continuation text exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogProbs {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpScore,
    Deterministic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub model_name: String,
    pub max_in_flight: usize,
    pub retry_budget: u32,
    pub seed: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Deterministic,
            endpoint: None,
            model_name: "deterministic".to_string(),
            max_in_flight: 8,
            retry_budget: 2,
            seed: 0,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight < 1 {
            return Err(PirError::Config("max_in_flight must be >= 1".into()));
        }
        if self.kind == BackendKind::HttpScore && self.endpoint.is_none() {
            return Err(PirError::Config("http_score backend requires an endpoint".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
}

/// A backend that scores continuations. One attempt per call; retries are
/// the gateway's job.
pub trait ScoreBackend: Send + Sync {
    fn score(&self, req: &ScoreRequest) -> Result<TokenLogProbs>;
    /// Stable identity string, part of every cache key.
    fn identity(&self) -> String;
}

/// A backend that answers chat requests. One attempt per call.
pub trait ChatBackend: Send + Sync {
    fn chat(&self, messages: &[ChatMessage]) -> Result<String>;
}

/// Retry wrapper shared by all chat callers: `budget` retries means at
/// most `budget + 1` attempts, retrying only transport-level errors.
pub fn chat_with_retries(
    backend: &dyn ChatBackend,
    messages: &[ChatMessage],
    budget: u32,
) -> Result<String> {
    let mut last = None;
    for _ in 0..=budget {
        match backend.chat(messages) {
            Ok(reply) => return Ok(reply),
            Err(e @ PirError::Backend(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| PirError::Backend("chat failed".into())))
}

struct Semaphore {
    permits: Mutex<usize>,
    cvar: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits), cvar: Condvar::new() }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.cvar.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cvar.notify_one();
    }
}

/// Counters exposed for run manifests and call-count checks.
#[derive(Debug, Default)]
pub struct GatewayCounters {
    pub backend_calls: AtomicU64,
    pub cache_hits: AtomicU64,
}

impl GatewayCounters {
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }
}

/// The scoring gateway: cache in front, bounded concurrency and bounded
/// retries behind, invariant checks on every response.
pub struct Gateway {
    backend: Arc<dyn ScoreBackend>,
    cache: Option<DiskCache>,
    retry_budget: u32,
    semaphore: Semaphore,
    counters: GatewayCounters,
}

impl Gateway {
    pub fn new(
        backend: Arc<dyn ScoreBackend>,
        cache: Option<DiskCache>,
        max_in_flight: usize,
        retry_budget: u32,
    ) -> Self {
        Self {
            backend,
            cache,
            retry_budget,
            semaphore: Semaphore::new(max_in_flight.max(1)),
            counters: GatewayCounters::default(),
        }
    }

    /// Build a gateway from a backend config, wiring up the matching
    /// backend implementation.
    pub fn from_config(config: &BackendConfig, cache: Option<DiskCache>) -> Result<Self> {
        config.validate()?;
        let backend: Arc<dyn ScoreBackend> = match config.kind {
            BackendKind::Deterministic => Arc::new(DeterministicBackend::new(config.seed)),
            BackendKind::HttpScore => Arc::new(HttpScoreBackend::new(
                config.endpoint.clone().expect("validated"),
                config.model_name.clone(),
            )?),
        };
        Ok(Self::new(backend, cache, config.max_in_flight, config.retry_budget))
    }

    pub fn counters(&self) -> &GatewayCounters {
        &self.counters
    }

    pub fn cache_hit_rate(&self) -> f64 {
        let hits = self.counters.cache_hits() as f64;
        let total = hits + self.counters.backend_calls() as f64;
        if total == 0.0 {
            0.0
        } else {
            hits / total
        }
    }

    fn cache_key(&self, req: &ScoreRequest) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.backend.identity().as_bytes());
        hasher.update([0u8]);
        hasher.update(Sha256::digest(req.context.as_bytes()));
        hasher.update(Sha256::digest(req.continuation.as_bytes()));
        hex_encode(&hasher.finalize())
    }

    /// Per-token natural-log probabilities of the continuation given the
    /// context. Cache first, then bounded retries against the backend.
    pub fn score_continuation(&self, req: &ScoreRequest) -> Result<TokenLogProbs> {
        if req.continuation.is_empty() {
            return Err(PirError::Validation("continuation must be non-empty".into()));
        }
        let key = self.cache_key(req);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key)? {
                self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(hit);
            }
        }
        let _permit = self.semaphore.acquire();
        let mut last = None;
        for _ in 0..=self.retry_budget {
            self.counters.backend_calls.fetch_add(1, Ordering::SeqCst);
            match self.backend.score(req) {
                Ok(lp) => {
                    validate_logprobs(&lp, &req.continuation)?;
                    if let Some(cache) = &self.cache {
                        cache.put(&key, &lp)?;
                    }
                    return Ok(lp);
                }
                Err(e @ PirError::Backend(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| PirError::Backend("scoring failed".into())))
    }
}

fn validate_logprobs(lp: &TokenLogProbs, continuation: &str) -> Result<()> {
    if lp.tokens.len() != lp.logprobs.len() {
        return Err(PirError::Protocol(format!(
            "{} tokens but {} logprobs",
            lp.tokens.len(),
            lp.logprobs.len()
        )));
    }
    if lp.tokens.is_empty() {
        return Err(PirError::Protocol("empty token list".into()));
    }
    let joined: String = lp.tokens.concat();
    if joined != continuation {
        return Err(PirError::Protocol(
            "token concatenation does not equal the continuation".into(),
        ));
    }
    for (i, &p) in lp.logprobs.iter().enumerate() {
        if !p.is_finite() || p > 0.0 {
            return Err(PirError::Protocol(format!("logprob {p} at position {i}")));
        }
    }
    Ok(())
}

pub(crate) fn hex_encode(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use std::fmt::Write;
        write!(out, "{b:02x}").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use stub::{CountingScore, FlakyScore};

    fn req() -> ScoreRequest {
        ScoreRequest { context: "ctx".into(), continuation: "a b c".into() }
    }

    #[test]
    fn deterministic_scores_are_cached() {
        let dir = tempfile::tempdir().unwrap();
        let inner = Arc::new(CountingScore::new(DeterministicBackend::new(7)));
        let gw = Gateway::new(inner.clone(), Some(DiskCache::new(dir.path()).unwrap()), 4, 2);
        let first = gw.score_continuation(&req()).unwrap();
        let second = gw.score_continuation(&req()).unwrap();
        assert_eq!(first, second);
        assert_eq!(inner.calls(), 1);
        assert_eq!(gw.counters().cache_hits(), 1);
    }

    #[test]
    fn retry_budget_bounds_attempts() {
        let flaky = Arc::new(FlakyScore::always_failing());
        let gw = Gateway::new(flaky.clone(), None, 1, 2);
        let err = gw.score_continuation(&req()).unwrap_err();
        assert!(matches!(err, PirError::Backend(_)));
        assert_eq!(flaky.attempts(), 3);
    }

    #[test]
    fn mismatched_tokens_are_a_protocol_error() {
        let bad = Arc::new(stub::FixedScore::new(TokenLogProbs {
            tokens: vec!["nope".into()],
            logprobs: vec![-1.0],
        }));
        let gw = Gateway::new(bad, None, 1, 0);
        assert!(matches!(gw.score_continuation(&req()), Err(PirError::Protocol(_))));
    }

    #[test]
    fn positive_logprob_rejected() {
        let bad = Arc::new(stub::FixedScore::new(TokenLogProbs {
            tokens: vec!["a b c".into()],
            logprobs: vec![0.5],
        }));
        let gw = Gateway::new(bad, None, 1, 0);
        assert!(matches!(gw.score_continuation(&req()), Err(PirError::Protocol(_))));
    }

    #[test]
    fn chat_retries_stop_at_budget() {
        let flaky = stub::FlakyChat::failing_times(3, "ok");
        let err = chat_with_retries(&flaky, &[ChatMessage::user("hi")], 2).unwrap_err();
        assert!(matches!(err, PirError::Backend(_)));
        assert_eq!(flaky.attempts(), 3);

        let flaky = stub::FlakyChat::failing_times(2, "ok");
        let reply = chat_with_retries(&flaky, &[ChatMessage::user("hi")], 2).unwrap();
        assert_eq!(reply, "ok");
    }
}
