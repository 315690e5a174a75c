//! Clients for OpenAI-compatible embedding and chat-completion endpoints.

mod embed;
mod limiter;
mod sample;
mod transport;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

pub use embed::EmbeddingClient;
pub use limiter::{InFlightLimiter, Permit};
pub use sample::{SamplingClient, SamplingConfig};
pub use transport::{endpoint_url, HttpTransport, Transport, TransportError};

use crate::cache::CacheError;
use crate::records::GenerationSample;

pub const API_KEY_ENV: &str = "RDSKIT_API_KEY";
pub const EMBED_URL_ENV: &str = "RDSKIT_EMBED_URL";
pub const LLM_URL_ENV: &str = "RDSKIT_LLM_URL";

const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid client configuration: {0}")]
    InvalidConfig(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("authentication rejected: {0}")]
    Auth(TransportError),
    #[error(transparent)]
    Transport(TransportError),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: TransportError },
    #[error("endpoint returned vectors of differing dimensions {dims:?}")]
    EncoderInconsistency { dims: Vec<usize> },
    #[error("endpoint never returned {missing} of the requested embeddings")]
    IncompleteEmbeddings { missing: usize },
    #[error("requested {requested} samples, endpoint returned {}", received.len())]
    PartialBatch {
        received: Vec<GenerationSample>,
        requested: usize,
    },
    #[error("unexpected response shape: {0}")]
    Protocol(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

/// Where and how to reach one endpoint.
#[derive(Clone)]
pub struct EndpointConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    /// Extra attempts after the first for transient failures.
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub batch_size: usize,
    /// Delay before the first retry; doubles on each further one.
    pub retry_backoff: Duration,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            max_in_flight: 4,
            batch_size: 64,
            retry_backoff: Duration::from_millis(250),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key.filter(|k| !k.is_empty());
        self
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: &str| Err(ClientError::InvalidConfig(m.to_string()));
        if self.base_url.trim().is_empty() {
            return bad("base_url is empty");
        }
        if self.model.trim().is_empty() {
            return bad("model is empty");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1");
        }
        if self.timeout.is_zero() {
            return bad("timeout must be positive");
        }
        Ok(())
    }

    pub fn http_transport(&self) -> HttpTransport {
        HttpTransport::new(&self.base_url, self.api_key.clone(), self.timeout)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.retry_backoff.saturating_mul(factor).min(MAX_BACKOFF)
    }
}

impl fmt::Debug for EndpointConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EndpointConfig")
            .field("base_url", &self.base_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("model", &self.model)
            .field("timeout", &self.timeout)
            .field("max_retries", &self.max_retries)
            .field("max_in_flight", &self.max_in_flight)
            .field("batch_size", &self.batch_size)
            .field("retry_backoff", &self.retry_backoff)
            .finish()
    }
}

/// One logical request: limited concurrency, transient retries with
/// exponential backoff, fatal auth errors.
fn post_with_retries(
    cfg: &EndpointConfig,
    transport: &dyn Transport,
    limiter: &InFlightLimiter,
    calls: &AtomicU64,
    endpoint: &str,
    body: &Value,
) -> Result<Value, ClientError> {
    let mut attempt = 0u32;
    loop {
        let result = {
            let _permit = limiter.acquire();
            calls.fetch_add(1, Ordering::Relaxed);
            transport.post_json(endpoint, body)
        };
        match result {
            Ok(v) => return Ok(v),
            Err(e) if e.is_auth() => return Err(ClientError::Auth(e)),
            Err(e) if e.is_transient() => {
                if attempt >= cfg.max_retries {
                    return Err(ClientError::RetriesExhausted {
                        attempts: attempt + 1,
                        last: e,
                    });
                }
                attempt += 1;
                let wait = cfg.backoff(attempt);
                log::warn!("{endpoint}: {e}; retry {attempt}/{} in {wait:?}", cfg.max_retries);
                std::thread::sleep(wait);
            }
            Err(e) => return Err(ClientError::Transport(e)),
        }
    }
}
