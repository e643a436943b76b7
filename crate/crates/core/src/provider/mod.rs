//! Model-provider abstraction.
//!
//! Every model interaction goes through [`ModelProvider`], a synchronous
//! request/response interface over structured JSON payloads, and through
//! [`StructuredClient`], which adds retries with backoff, rate limiting,
//! schema validation with a single repair re-prompt, and a replayable
//! transcript of raw exchanges. Embeddings go through [`EmbeddingProvider`].

mod embed;
mod http;
mod scripted;
mod validate;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use embed::{cosine, hash_embed, EmbeddingProvider, HashEmbedder};
pub use http::HttpProvider;
pub use scripted::{FnProvider, ScriptedProvider, Transcript, TranscriptEntry};
pub use validate::ResponseSchema;

/// Sampling temperature for every request. Not configurable.
pub const TEMPERATURE: f64 = 0.0;

/// A single structured-generation request.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub prompt: String,
    pub schema: ResponseSchema,
}

impl Request {
    pub fn new(prompt: impl Into<String>, schema: ResponseSchema) -> Self {
        Request {
            prompt: prompt.into(),
            schema,
        }
    }

    pub fn temperature(&self) -> f64 {
        TEMPERATURE
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.prompt, &self.schema)
    }
}

/// Stable hash of (prompt text, response schema identity), hex encoded.
pub fn fingerprint(prompt: &str, schema: &ResponseSchema) -> String {
    let mut h = Sha256::new();
    h.update(schema.identity().as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(&h.finalize()[..16])
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider rejected request: {0}")]
    Rejected(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("unscripted request {0}")]
    Unscripted(String),
}

impl ProviderError {
    /// Timeouts and transport failures are worth another attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Timeout | ProviderError::Transport(_))
    }
}

/// A chat-style structured generator.
pub trait ModelProvider: Send + Sync {
    fn complete(&self, request: &Request) -> Result<Value, ProviderError>;
}

impl<P: ModelProvider + ?Sized> ModelProvider for Arc<P> {
    fn complete(&self, request: &Request) -> Result<Value, ProviderError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backoff {
    #[serde(with = "millis")]
    pub base: Duration,
    pub multiplier: f64,
    /// Full jitter: sleep a uniform random fraction of the computed delay.
    pub jitter: bool,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            base: Duration::from_millis(200),
            multiplier: 4.0,
            jitter: true,
        }
    }
}

impl Backoff {
    pub fn none() -> Self {
        Backoff {
            base: Duration::ZERO,
            multiplier: 1.0,
            jitter: false,
        }
    }

    /// Upper bound of the delay before retry number `retry` (0-based).
    pub fn ceiling(&self, retry: u32) -> Duration {
        self.base.mul_f64(self.multiplier.powi(retry as i32))
    }

    fn delay(&self, retry: u32) -> Duration {
        let ceiling = self.ceiling(retry);
        if self.jitter && !ceiling.is_zero() {
            ceiling.mul_f64(rand::rng().random::<f64>())
        } else {
            ceiling
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSettings {
    /// Total attempts per request for retryable failures.
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub timeout: Duration,
    pub backoff: Backoff,
    /// Token-bucket rate; `None` disables limiting.
    pub requests_per_second: Option<f64>,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        ProviderSettings {
            max_retries: 3,
            timeout: Duration::from_secs(60),
            backoff: Backoff::default(),
            requests_per_second: None,
        }
    }
}

impl ProviderSettings {
    /// Default retry count with no sleeping; used by tests and replay.
    pub fn immediate() -> Self {
        ProviderSettings {
            backoff: Backoff::none(),
            ..Default::default()
        }
    }
}

/// Token bucket shared by all callers of a client.
#[derive(Debug)]
pub struct RateLimiter {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64) -> Self {
        let rate = requests_per_second.max(f64::MIN_POSITIVE);
        let capacity = rate.max(1.0);
        RateLimiter {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().unwrap();
                let (tokens, last) = &mut *state;
                let now = Instant::now();
                *tokens = (*tokens + now.duration_since(*last).as_secs_f64() * self.rate)
                    .min(self.capacity);
                *last = now;
                if *tokens >= 1.0 {
                    *tokens -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - *tokens) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GenerateError {
    #[error("provider failed after {attempts} attempt(s): {source}")]
    Provider {
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("response failed validation after repair: {0}")]
    Validation(String),
}

/// A validated payload plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub payload: Value,
    pub fingerprint: String,
    pub repair_count: u32,
}

/// Builds the repair prompt sent after a response fails validation.
pub fn repair_prompt(prompt: &str, error: &str) -> String {
    format!(
        "{prompt}\n\n---\nYour previous response was rejected: {error}\n\
         Respond again with a corrected JSON object that satisfies the response schema."
    )
}

/// Retrying, validating, logging front-end over a [`ModelProvider`].
pub struct StructuredClient {
    provider: Arc<dyn ModelProvider>,
    settings: ProviderSettings,
    limiter: Option<RateLimiter>,
    transcript: Mutex<BTreeMap<String, Value>>,
    calls: AtomicU64,
}

impl std::fmt::Debug for StructuredClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StructuredClient")
            .field("settings", &self.settings)
            .field("calls", &self.calls())
            .finish()
    }
}

impl StructuredClient {
    pub fn new(provider: Arc<dyn ModelProvider>, settings: ProviderSettings) -> Self {
        let limiter = settings.requests_per_second.map(RateLimiter::new);
        StructuredClient {
            provider,
            settings,
            limiter,
            transcript: Mutex::new(BTreeMap::new()),
            calls: AtomicU64::new(0),
        }
    }

    pub fn settings(&self) -> &ProviderSettings {
        &self.settings
    }

    /// Number of provider calls made so far, including retries.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Raw exchanges recorded so far, ordered by fingerprint.
    pub fn transcript(&self) -> Transcript {
        let map = self.transcript.lock().unwrap();
        Transcript::from_entries(map.iter().map(|(fp, payload)| TranscriptEntry {
            fingerprint: fp.clone(),
            payload: payload.clone(),
        }))
    }

    /// Sends a request, retrying retryable failures with backoff.
    pub fn call(&self, prompt: &str, schema: &ResponseSchema) -> Result<Value, GenerateError> {
        let request = Request::new(prompt, schema.clone());
        let fp = request.fingerprint();
        let attempts = self.settings.max_retries.max(1);
        let mut attempt = 0;
        loop {
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            attempt += 1;
            self.calls.fetch_add(1, Ordering::Relaxed);
            match self.provider.complete(&request) {
                Ok(payload) => {
                    log::debug!("exchange {fp} ({}) ok", schema.name);
                    self.transcript.lock().unwrap().insert(fp, payload.clone());
                    return Ok(payload);
                }
                Err(e) if e.is_retryable() && attempt < attempts => {
                    let delay = self.settings.backoff.delay(attempt - 1);
                    log::warn!("exchange {fp} attempt {attempt} failed: {e}; retrying in {delay:?}");
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(e) => {
                    log::warn!("exchange {fp} failed after {attempt} attempt(s): {e}");
                    return Err(GenerateError::Provider {
                        attempts: attempt,
                        source: e,
                    });
                }
            }
        }
    }

    /// Sends a request and validates the payload against `schema`. A payload
    /// failing validation gets one repair re-prompt carrying the validation
    /// error; a second failure is a hard error.
    pub fn generate_structured(
        &self,
        prompt: &str,
        schema: &ResponseSchema,
    ) -> Result<Generated, GenerateError> {
        let fp = fingerprint(prompt, schema);
        let payload = self.call(prompt, schema)?;
        let error = match schema.validate(&payload) {
            Ok(()) => {
                return Ok(Generated {
                    payload,
                    fingerprint: fp,
                    repair_count: 0,
                })
            }
            Err(e) => e,
        };
        log::info!("response {fp} failed validation ({error}); re-prompting");
        let repair = repair_prompt(prompt, &error);
        let payload = self.call(&repair, schema)?;
        schema
            .validate(&payload)
            .map_err(GenerateError::Validation)?;
        Ok(Generated {
            payload,
            fingerprint: fingerprint(&repair, schema),
            repair_count: 1,
        })
    }
}
