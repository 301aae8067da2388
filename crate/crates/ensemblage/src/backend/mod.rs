//! Uniform completion interface over live model providers and a
//! deterministic mock.
//!
//! Everything above this layer (agents, structures, moderators) talks to a
//! [`Backend`] and nothing else. Live traffic goes through an
//! OpenAI-compatible chat adapter ([`OpenAiCompatBackend`]); tests and
//! `--mock` runs use [`MockBackend`], which is deterministic by construction.

mod mock;
mod openai;

pub use mock::{MockBackend, HASH_ECHO_PREFIX_LEN};
pub use openai::OpenAiCompatBackend;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

/// One completion request, provider-neutral.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRequest {
    pub model_id: String,
    pub system_instructions: Option<String>,
    pub user_message: String,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    /// Extra provider parameters, forwarded verbatim into the request body.
    pub extra_params: BTreeMap<String, Value>,
}

impl ModelRequest {
    pub fn new(model_id: impl Into<String>, user_message: impl Into<String>) -> Self {
        ModelRequest {
            model_id: model_id.into(),
            system_instructions: None,
            user_message: user_message.into(),
            temperature: None,
            max_tokens: None,
            extra_params: BTreeMap::new(),
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system_instructions = Some(system.into());
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = Some(t);
        self
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = Some(n);
        self
    }

    /// Malformed requests are rejected before any provider call and are
    /// never retried.
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.user_message.is_empty() {
            return Err(BackendError::InvalidRequest(
                "user_message must be non-empty".into(),
            ));
        }
        if let Some(t) = self.temperature {
            if !t.is_finite() || t < 0.0 {
                return Err(BackendError::InvalidRequest(format!(
                    "temperature must be finite and >= 0, got {t}"
                )));
            }
        }
        if self.max_tokens == Some(0) {
            return Err(BackendError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A completed request. `text` is the provider output with only trailing
/// whitespace removed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub text: String,
    pub model_id: String,
    pub latency: Duration,
    pub attempt_count: u32,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider error (status {status}): {body}")]
    Provider { status: u16, body: String },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("scripted mock has no entry for message starting {0:?} and no fallback")]
    ScriptMiss(String),
    #[error("sequence mock exhausted")]
    SequenceExhausted,
    #[error("missing credential: set {0}")]
    MissingCredential(String),
}

impl BackendError {
    /// Transient failures worth retrying: network errors, HTTP 429 and 5xx.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Network(_) | BackendError::Timeout(_) => true,
            BackendError::Provider { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Retry policy for transient provider failures.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub backoff_multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_backoff: Duration::from_millis(500),
            backoff_multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1` (i.e. after the `attempt`-th try,
    /// 1-based). Non-decreasing in `attempt` since the multiplier is >= 1.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let factor = self
            .backoff_multiplier
            .powi(attempt.saturating_sub(1) as i32);
        self.base_backoff.mul_f64(factor)
    }
}

/// Shared completion interface. Implementations must be safe to call from
/// multiple threads at once; structures run independent turns concurrently.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        (**self).complete(request)
    }
}

/// Wrapper that counts completions. The engine uses it to check that every
/// backend call ends up in the trace exactly once.
pub struct CountingBackend<'a> {
    inner: &'a dyn Backend,
    calls: AtomicU64,
}

impl<'a> CountingBackend<'a> {
    pub fn new(inner: &'a dyn Backend) -> Self {
        CountingBackend {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for CountingBackend<'_> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        assert!(ModelRequest::new("m", "hi").validate().is_ok());
        assert!(ModelRequest::new("m", "").validate().is_err());
        assert!(ModelRequest::new("m", "hi")
            .with_temperature(-0.1)
            .validate()
            .is_err());
        assert!(ModelRequest::new("m", "hi")
            .with_temperature(f64::NAN)
            .validate()
            .is_err());
        let mut req = ModelRequest::new("m", "hi");
        req.max_tokens = Some(0);
        assert!(req.validate().is_err());
    }

    #[test]
    fn default_retry_policy() {
        let p = RetryPolicy::default();
        assert_eq!(p.max_attempts, 3);
        assert_eq!(p.base_backoff, Duration::from_millis(500));
        assert_eq!(p.backoff_multiplier, 2.0);
    }

    #[test]
    fn delays_non_decreasing() {
        let p = RetryPolicy {
            max_attempts: 6,
            base_backoff: Duration::from_millis(100),
            backoff_multiplier: 1.7,
        };
        let mut last = Duration::ZERO;
        for attempt in 1..6 {
            let d = p.delay_after(attempt);
            assert!(d >= last);
            last = d;
        }
    }

    #[test]
    fn retryable_classification() {
        assert!(BackendError::Network("x".into()).is_retryable());
        assert!(BackendError::Provider {
            status: 429,
            body: String::new()
        }
        .is_retryable());
        assert!(BackendError::Provider {
            status: 503,
            body: String::new()
        }
        .is_retryable());
        assert!(!BackendError::Provider {
            status: 400,
            body: String::new()
        }
        .is_retryable());
        assert!(!BackendError::Auth("bad key".into()).is_retryable());
        assert!(!BackendError::InvalidRequest("x".into()).is_retryable());
    }
}
