//! Likelihood and consistency baselines: NLL, ANLL, answer extraction and
//! majority-vote self-consistency.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed above zero for a natural-log token probability.
pub const LOGPROB_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("generation has no tokens")]
    EmptyGeneration,
    #[error("token log-probability {index} is invalid ({value})")]
    InvalidLogprob { index: usize, value: f64 },
    #[error("invalid extraction pattern: {0}")]
    InvalidPattern(String),
}

/// Natural-log probabilities of the T ≥ 1 tokens of one generation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenLogprobs(Vec<f64>);

impl TokenLogprobs {
    pub fn new(values: Vec<f64>) -> Result<Self, BaselineError> {
        if values.is_empty() {
            return Err(BaselineError::EmptyGeneration);
        }
        if let Some(index) = values
            .iter()
            .position(|v| !v.is_finite() || *v > LOGPROB_SLACK)
        {
            return Err(BaselineError::InvalidLogprob {
                index,
                value: values[index],
            });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// −Σ log p.
    pub fn nll(&self) -> f64 {
        -self.0.iter().sum::<f64>()
    }

    /// −(1/T) Σ log p.
    pub fn anll(&self) -> f64 {
        self.nll() / self.0.len() as f64
    }
}

pub fn nll(values: &[f64]) -> Result<f64, BaselineError> {
    Ok(TokenLogprobs::new(values.to_vec())?.nll())
}

pub fn anll(values: &[f64]) -> Result<f64, BaselineError> {
    Ok(TokenLogprobs::new(values.to_vec())?.anll())
}

/// How a comparable answer is pulled out of free-form text.
#[derive(Debug, Clone)]
pub enum ExtractionMode {
    /// Final number in the text.
    LastNumber,
    /// Whole text, lowercased, punctuation stripped, whitespace collapsed.
    NormalizedFull,
    /// First capture group (or the whole match when the pattern has none).
    Pattern(Regex),
}

impl ExtractionMode {
    pub fn pattern(pattern: &str) -> Result<Self, BaselineError> {
        Regex::new(pattern)
            .map(Self::Pattern)
            .map_err(|e| BaselineError::InvalidPattern(e.to_string()))
    }

    /// Parses `last_number`, `normalized_full` or `regex:<pattern>`.
    pub fn parse(spec: &str) -> Result<Self, BaselineError> {
        match spec {
            "last_number" => Ok(Self::LastNumber),
            "normalized_full" => Ok(Self::NormalizedFull),
            other => match other.strip_prefix("regex:") {
                Some(p) => Self::pattern(p),
                None => Err(BaselineError::InvalidPattern(format!(
                    "unknown extraction mode `{other}`"
                ))),
            },
        }
    }
}

/// A canonical answer; unanswerable samples vote as their own bucket.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "canonical", rename_all = "snake_case")]
pub enum ExtractedAnswer {
    Numeric(String),
    Text(String),
    Unanswerable,
}

impl ExtractedAnswer {
    pub fn canonical(&self) -> Option<&str> {
        match self {
            Self::Numeric(s) | Self::Text(s) => Some(s),
            Self::Unanswerable => None,
        }
    }

    pub fn is_answerable(&self) -> bool {
        !matches!(self, Self::Unanswerable)
    }
}

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[+-]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?|[+-]?\.\d+").expect("valid regex")
    })
}

pub fn extract_answer(text: &str, mode: &ExtractionMode) -> ExtractedAnswer {
    match mode {
        ExtractionMode::LastNumber => {
            let Some(m) = number_regex().find_iter(text).last() else {
                return ExtractedAnswer::Unanswerable;
            };
            let mut token = m.as_str();
            // "3-4" is a range, not a negative four.
            if token.starts_with(['+', '-'])
                && text[..m.start()]
                    .chars()
                    .next_back()
                    .is_some_and(char::is_alphanumeric)
            {
                token = &token[1..];
            }
            ExtractedAnswer::Numeric(canonical_number(token))
        }
        ExtractionMode::NormalizedFull => {
            let norm = normalize_text(text);
            if norm.is_empty() {
                ExtractedAnswer::Unanswerable
            } else {
                ExtractedAnswer::Text(norm)
            }
        }
        ExtractionMode::Pattern(re) => {
            let Some(caps) = re.captures(text) else {
                return ExtractedAnswer::Unanswerable;
            };
            let found = caps.get(1).or_else(|| caps.get(0)).map(|m| m.as_str().trim());
            match found {
                Some(s) if !s.is_empty() => ExtractedAnswer::Text(s.to_string()),
                _ => ExtractedAnswer::Unanswerable,
            }
        }
    }
}

/// Strips grouping commas, a leading `+`, redundant leading zeros and
/// trailing fractional zeros.
fn canonical_number(token: &str) -> String {
    let cleaned: String = token.chars().filter(|&c| c != ',').collect();
    let (negative, digits) = match cleaned.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, cleaned.strip_prefix('+').unwrap_or(&cleaned)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f.trim_end_matches('0')),
        None => (digits, ""),
    };
    let int_part = int_part.trim_start_matches('0');
    let int_part = if int_part.is_empty() { "0" } else { int_part };
    let body = if frac_part.is_empty() {
        int_part.to_string()
    } else {
        format!("{int_part}.{frac_part}")
    };
    if negative && body != "0" {
        format!("-{body}")
    } else {
        body
    }
}

/// Lowercase, drop punctuation and symbols, collapse whitespace.
pub fn normalize_text(text: &str) -> String {
    let stripped: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn bucket_counts(answers: &[ExtractedAnswer]) -> HashMap<&ExtractedAnswer, usize> {
    let mut counts = HashMap::new();
    for a in answers {
        *counts.entry(a).or_insert(0) += 1;
    }
    counts
}

/// 1 − (size of the largest answer bucket) / N. `None` for no answers.
pub fn self_consistency(answers: &[ExtractedAnswer]) -> Option<f64> {
    if answers.is_empty() {
        return None;
    }
    let majority = bucket_counts(answers).values().copied().max().unwrap_or(0);
    Some(1.0 - majority as f64 / answers.len() as f64)
}

/// Per-sample consistency score: 1 − (own bucket size) / N.
pub fn self_consistency_per_sample(answers: &[ExtractedAnswer]) -> Vec<f64> {
    let counts = bucket_counts(answers);
    let n = answers.len() as f64;
    answers.iter().map(|a| 1.0 - counts[a] as f64 / n).collect()
}
