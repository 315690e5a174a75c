use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};

use super::{post_with_retries, ClientError, EndpointConfig, InFlightLimiter, Transport};
use crate::records::GenerationSample;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingConfig {
    pub n: usize,
    pub temperature: f64,
    pub max_tokens: usize,
    pub want_logprobs: bool,
    /// Forwarded to endpoints that support seeded sampling.
    pub seed: Option<u64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n: 10,
            temperature: 1.0,
            max_tokens: 512,
            want_logprobs: true,
            seed: None,
        }
    }
}

/// Draws completions from a chat-completions endpoint.
pub struct SamplingClient {
    cfg: EndpointConfig,
    transport: Arc<dyn Transport>,
    limiter: InFlightLimiter,
    calls: AtomicU64,
}

impl SamplingClient {
    pub fn new(cfg: EndpointConfig, transport: Arc<dyn Transport>) -> Result<Self, ClientError> {
        cfg.validate()?;
        Ok(Self {
            limiter: InFlightLimiter::new(cfg.max_in_flight),
            cfg,
            transport,
            calls: AtomicU64::new(0),
        })
    }

    pub fn http(cfg: EndpointConfig) -> Result<Self, ClientError> {
        let transport = Arc::new(cfg.http_transport());
        Self::new(cfg, transport)
    }

    pub fn network_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// `sampling.n` completions at `sampling.temperature`. Fewer choices
    /// than requested yields [`ClientError::PartialBatch`] carrying the
    /// ones that did arrive.
    pub fn sample_generations(
        &self,
        prompt: &str,
        sampling: &SamplingConfig,
    ) -> Result<Vec<GenerationSample>, ClientError> {
        if prompt.is_empty() {
            return Err(ClientError::EmptyPrompt);
        }
        if sampling.n == 0 {
            return Err(ClientError::InvalidConfig("n must be at least 1".into()));
        }
        if !(sampling.temperature.is_finite() && sampling.temperature >= 0.0) {
            return Err(ClientError::InvalidConfig("temperature must be >= 0".into()));
        }
        let mut body = json!({
            "model": self.cfg.model,
            "messages": [{"role": "user", "content": prompt}],
            "n": sampling.n,
            "temperature": sampling.temperature,
            "max_tokens": sampling.max_tokens,
        });
        if sampling.want_logprobs {
            body["logprobs"] = json!(true);
        }
        if let Some(seed) = sampling.seed {
            body["seed"] = json!(seed);
        }
        let resp = post_with_retries(
            &self.cfg,
            self.transport.as_ref(),
            &self.limiter,
            &self.calls,
            "chat/completions",
            &body,
        )?;
        let samples = parse_choices(&resp, sampling.want_logprobs)?;
        if samples.len() < sampling.n {
            return Err(ClientError::PartialBatch {
                received: samples,
                requested: sampling.n,
            });
        }
        Ok(samples)
    }

    /// A single temperature-0 completion.
    pub fn greedy(&self, prompt: &str, sampling: &SamplingConfig) -> Result<GenerationSample, ClientError> {
        let cfg = SamplingConfig {
            n: 1,
            temperature: 0.0,
            ..sampling.clone()
        };
        let mut out = self.sample_generations(prompt, &cfg)?;
        Ok(out.swap_remove(0))
    }
}

fn parse_choices(resp: &Value, want_logprobs: bool) -> Result<Vec<GenerationSample>, ClientError> {
    let choices = resp
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| ClientError::Protocol("missing `choices` array".into()))?;
    let mut indexed: Vec<(u64, GenerationSample)> = Vec::with_capacity(choices.len());
    let mut lacking = 0;
    for (pos, choice) in choices.iter().enumerate() {
        let index = choice.get("index").and_then(Value::as_u64).unwrap_or(pos as u64);
        let text = choice
            .pointer("/message/content")
            .and_then(Value::as_str)
            .or_else(|| choice.get("text").and_then(Value::as_str))
            .ok_or_else(|| ClientError::Protocol("choice without content".into()))?
            .to_string();
        let token_logprobs = if want_logprobs {
            let lp = parse_logprobs(choice);
            if lp.is_none() {
                lacking += 1;
            }
            lp
        } else {
            None
        };
        indexed.push((
            index,
            GenerationSample {
                text,
                token_logprobs,
                embedding: None,
            },
        ));
    }
    if lacking > 0 {
        log::warn!("{lacking} of {} choices came back without token log-probabilities", choices.len());
    }
    indexed.sort_by_key(|(i, _)| *i);
    Ok(indexed.into_iter().map(|(_, s)| s).collect())
}

/// Token log-probabilities from either the chat (`logprobs.content[]`) or
/// the legacy (`logprobs.token_logprobs`) shape.
fn parse_logprobs(choice: &Value) -> Option<Vec<f64>> {
    let lp = choice.get("logprobs")?;
    let values: Vec<f64> = if let Some(content) = lp.get("content").and_then(Value::as_array) {
        content
            .iter()
            .map(|t| t.get("logprob").and_then(Value::as_f64))
            .collect::<Option<_>>()?
    } else {
        lp.get("token_logprobs")?
            .as_array()?
            .iter()
            .map(Value::as_f64)
            .collect::<Option<_>>()?
    };
    let valid = !values.is_empty() && values.iter().all(|v| v.is_finite() && *v <= crate::LOGPROB_SLACK);
    valid.then_some(values)
}
