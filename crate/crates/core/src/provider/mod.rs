//! Chat-completion access to subject models.
//!
//! A [`ChatProvider`] performs one attempt. The [`Gateway`] wraps a provider
//! with request validation, retry with exponential backoff, and a cap on
//! in-flight requests shared by every caller.

mod http;
mod scripted;

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use http::{HttpProvider, HttpProviderConfig};
pub use scripted::{
    scripted_complete, scripted_verdict, CannedProvider, ConfusionSpec, ProfileError,
    ScriptedProvider, SubjectProfile,
};

/// Sampling temperature for task generation.
pub const GENERATION_TEMPERATURE: f64 = 1.0;
/// Sampling temperature for task classification.
pub const CLASSIFICATION_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_GENERATION_MAX_TOKENS: u32 = 1024;
pub const DEFAULT_CLASSIFICATION_MAX_TOKENS: u32 = 2048;
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestPurpose {
    Generation,
    Classification,
}

impl RequestPurpose {
    pub fn temperature(self) -> f64 {
        match self {
            RequestPurpose::Generation => GENERATION_TEMPERATURE,
            RequestPurpose::Classification => CLASSIFICATION_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    /// Correlates failures in the run log; the task id for pipeline calls.
    pub request_id: String,
    pub purpose: RequestPurpose,
    pub prompt_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl CompletionRequest {
    /// Request with the temperature and token budget fixed by `purpose`.
    pub fn for_purpose(
        purpose: RequestPurpose,
        request_id: impl Into<String>,
        model_id: impl Into<String>,
        prompt_text: impl Into<String>,
    ) -> Self {
        Self {
            request_id: request_id.into(),
            purpose,
            prompt_text: prompt_text.into(),
            temperature: purpose.temperature(),
            max_tokens: match purpose {
                RequestPurpose::Generation => DEFAULT_GENERATION_MAX_TOKENS,
                RequestPurpose::Classification => DEFAULT_CLASSIFICATION_MAX_TOKENS,
            },
            model_id: model_id.into(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |message: String| GatewayError::InvalidRequest {
            request_id: self.request_id.clone(),
            message,
        };
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(invalid(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.temperature != self.purpose.temperature() {
            return Err(invalid(format!(
                "{:?} requests must use temperature {}, got {}",
                self.purpose,
                self.purpose.temperature(),
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(invalid("max_tokens must be positive".to_string()));
        }
        if self.prompt_text.trim().is_empty() {
            return Err(invalid("prompt is empty".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub latency: Duration,
    pub attempt_count: u32,
    pub provider_id: String,
}

/// Outcome of a single failed attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderFailure {
    Unauthorized { status: u16 },
    RateLimited { retry_after: Option<Duration> },
    /// 5xx or similar; worth retrying.
    Unavailable { status: u16 },
    Transport(String),
    /// Non-retryable response.
    Rejected { status: u16, body: String },
    /// Response arrived but could not be decoded.
    Malformed(String),
}

impl ProviderFailure {
    fn is_transient(&self) -> bool {
        matches!(
            self,
            ProviderFailure::RateLimited { .. }
                | ProviderFailure::Unavailable { .. }
                | ProviderFailure::Transport(_)
        )
    }
}

/// One attempt at a completion.
pub trait ChatProvider: Send + Sync {
    fn id(&self) -> &str;
    fn attempt(&self, request: &CompletionRequest) -> Result<String, ProviderFailure>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("request {request_id}: {message}")]
    InvalidRequest { request_id: String, message: String },
    #[error("request {request_id}: authentication failed: {message}")]
    Auth { request_id: String, message: String },
    #[error("request {request_id}: rate limited on all {attempts} attempts")]
    RateLimitExhausted { request_id: String, attempts: u32 },
    #[error("request {request_id}: transport error after {attempts} attempts: {message}")]
    Transport {
        request_id: String,
        attempts: u32,
        message: String,
    },
    #[error("request {request_id}: provider error (status {status:?}): {message}")]
    Provider {
        request_id: String,
        status: Option<u16>,
        message: String,
    },
}

impl GatewayError {
    pub fn request_id(&self) -> &str {
        match self {
            GatewayError::InvalidRequest { request_id, .. }
            | GatewayError::Auth { request_id, .. }
            | GatewayError::RateLimitExhausted { request_id, .. }
            | GatewayError::Transport { request_id, .. }
            | GatewayError::Provider { request_id, .. } => request_id,
        }
    }

    /// Short machine-readable tag for logs.
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::InvalidRequest { .. } => "invalid_request",
            GatewayError::Auth { .. } => "auth",
            GatewayError::RateLimitExhausted { .. } => "rate_limit_exhausted",
            GatewayError::Transport { .. } => "transport",
            GatewayError::Provider { .. } => "provider",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; for scripted providers and tests.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before attempt `next_attempt` (2-based: the first retry).
    pub fn backoff(&self, next_attempt: u32, retry_after: Option<Duration>) -> Duration {
        let exp = next_attempt.saturating_sub(2).min(20);
        let computed = self.base_delay.saturating_mul(1u32 << exp);
        retry_after.unwrap_or(computed).min(self.max_delay)
    }
}

/// Counting semaphore bounding in-flight provider calls.
#[derive(Debug)]
struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            available: Mutex::new(n),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> PermitGuard<'_> {
        let mut available = self.available.lock().expect("permit lock poisoned");
        while *available == 0 {
            available = self.freed.wait(available).expect("permit lock poisoned");
        }
        *available -= 1;
        PermitGuard { permits: self }
    }
}

struct PermitGuard<'a> {
    permits: &'a Permits,
}

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        let mut available = self.permits.available.lock().expect("permit lock poisoned");
        *available += 1;
        self.permits.freed.notify_one();
    }
}

/// Validated, retrying, concurrency-capped access to one provider.
#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn ChatProvider>,
    retry: RetryPolicy,
    max_in_flight: usize,
    permits: Arc<Permits>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn ChatProvider>, retry: RetryPolicy, max_in_flight: usize) -> Self {
        let max_in_flight = max_in_flight.max(1);
        Self {
            provider,
            retry,
            max_in_flight,
            permits: Arc::new(Permits::new(max_in_flight)),
        }
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        let started = Instant::now();
        let max_attempts = self.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            let result = {
                let _permit = self.permits.acquire();
                self.provider.attempt(request)
            };
            let failure = match result {
                Ok(text) => {
                    return Ok(CompletionResult {
                        text,
                        latency: started.elapsed(),
                        attempt_count: attempt,
                        provider_id: self.provider.id().to_string(),
                    })
                }
                Err(f) => f,
            };
            if !failure.is_transient() || attempt >= max_attempts {
                return Err(self.terminal_error(request, failure, attempt));
            }
            let retry_after = match &failure {
                ProviderFailure::RateLimited { retry_after } => *retry_after,
                _ => None,
            };
            attempt += 1;
            let delay = self.retry.backoff(attempt, retry_after);
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
        }
    }

    fn terminal_error(
        &self,
        request: &CompletionRequest,
        failure: ProviderFailure,
        attempts: u32,
    ) -> GatewayError {
        let request_id = request.request_id.clone();
        match failure {
            ProviderFailure::Unauthorized { status } => GatewayError::Auth {
                request_id,
                message: format!("provider {} returned status {status}", self.provider.id()),
            },
            ProviderFailure::RateLimited { .. } => GatewayError::RateLimitExhausted {
                request_id,
                attempts,
            },
            ProviderFailure::Transport(message) => GatewayError::Transport {
                request_id,
                attempts,
                message,
            },
            ProviderFailure::Unavailable { status } => GatewayError::Provider {
                request_id,
                status: Some(status),
                message: format!("still unavailable after {attempts} attempts"),
            },
            ProviderFailure::Rejected { status, body } => GatewayError::Provider {
                request_id,
                status: Some(status),
                message: body,
            },
            ProviderFailure::Malformed(message) => GatewayError::Provider {
                request_id,
                status: None,
                message,
            },
        }
    }

    /// Runs every request with at most `max_in_flight` concurrent calls.
    /// Results come back in request order.
    pub fn complete_all(
        &self,
        requests: &[CompletionRequest],
    ) -> Vec<Result<CompletionResult, GatewayError>> {
        use std::sync::atomic::{AtomicUsize, Ordering};

        let n = requests.len();
        let slots: Vec<Mutex<Option<Result<CompletionResult, GatewayError>>>> =
            (0..n).map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.max_in_flight.min(n);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let result = self.complete(&requests[i]);
                    *slots[i].lock().expect("result slot poisoned") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| {
                slot.into_inner()
                    .expect("result slot poisoned")
                    .expect("every request was processed")
            })
            .collect()
    }
}
