//! Correctness labels, AUROC for hallucination detection and best-of-N
//! selection accuracy.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{extract_answer, normalize_text, ExtractionMode};

/// Default ROUGE-L F1 gate for QA correctness.
pub const DEFAULT_ROUGE_THRESHOLD: f64 = 0.3;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("uncertainty score is not finite")]
    NonFiniteScore,
    #[error("record {index}: {scores} scores but {labels} correctness labels")]
    LengthMismatch {
        index: usize,
        scores: usize,
        labels: usize,
    },
    #[error("no reference answers")]
    NoReferences,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Lowercased whitespace tokens after punctuation stripping.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    normalize_text(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Longest common subsequence length, bit-parallel over the tokens of `a`.
pub fn lcs_length<T: Eq + std::hash::Hash>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let words = a.len().div_ceil(64);
    let mut masks: HashMap<&T, Vec<u64>> = HashMap::new();
    for (i, tok) in a.iter().enumerate() {
        masks.entry(tok).or_insert_with(|| vec![0; words])[i / 64] |= 1 << (i % 64);
    }
    let tail_bits = a.len() % 64;
    let tail_mask = if tail_bits == 0 { u64::MAX } else { (1u64 << tail_bits) - 1 };

    // Bits of `v` that are still set mark rows the LCS has not consumed.
    let mut v = vec![u64::MAX; words];
    for tok in b {
        let Some(m) = masks.get(tok) else { continue };
        let mut carry = 0u64;
        for w in 0..words {
            let u = v[w] & m[w];
            let (s1, c1) = v[w].overflowing_add(u);
            let (sum, c2) = s1.overflowing_add(carry);
            carry = u64::from(c1 || c2);
            v[w] = sum | (v[w] & !m[w]);
        }
    }
    v[words - 1] &= tail_mask;
    let ones: usize = v.iter().map(|w| w.count_ones() as usize).sum();
    a.len() - ones
}

/// ROUGE-L F1 = 2·LCS / (|cand| + |ref|); 0 when either side is empty.
pub fn rouge_l_f1(candidate: &str, reference: &str) -> f64 {
    let c = rouge_tokens(candidate);
    let r = rouge_tokens(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let lcs = lcs_length(&c, &r);
    2.0 * lcs as f64 / (c.len() + r.len()) as f64
}

/// How a generation is judged correct against its references.
#[derive(Debug, Clone)]
pub enum CorrectnessMode {
    ExactMatch { extraction: ExtractionMode },
    RougeGate { threshold: f64, inclusive: bool },
}

impl CorrectnessMode {
    pub fn exact(extraction: ExtractionMode) -> Self {
        Self::ExactMatch { extraction }
    }

    pub fn rouge(threshold: f64) -> Self {
        Self::RougeGate {
            threshold,
            inclusive: false,
        }
    }

    /// Extraction used when voting answers for self-consistency.
    pub fn voting_extraction(&self) -> ExtractionMode {
        match self {
            Self::ExactMatch { extraction } => extraction.clone(),
            Self::RougeGate { .. } => ExtractionMode::NormalizedFull,
        }
    }
}

/// True when the candidate matches any reference under `mode`.
///
/// Exact match compares extracted answers; an unanswerable candidate is
/// never correct. The ROUGE gate takes the best F1 over all references.
pub fn label_correct(candidate: &str, references: &[String], mode: &CorrectnessMode) -> bool {
    match mode {
        CorrectnessMode::ExactMatch { extraction } => {
            let cand = extract_answer(candidate, extraction);
            cand.is_answerable()
                && references
                    .iter()
                    .any(|r| extract_answer(r, extraction) == cand)
        }
        CorrectnessMode::RougeGate {
            threshold,
            inclusive,
        } => {
            let best = references
                .iter()
                .map(|r| rouge_l_f1(candidate, r))
                .fold(0.0, f64::max);
            if *inclusive {
                best >= *threshold
            } else {
                best > *threshold
            }
        }
    }
}

/// An uncertainty score paired with whether the generation was correct.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    uncertainty: f64,
    correct: bool,
}

impl LabeledScore {
    pub fn new(uncertainty: f64, correct: bool) -> Result<Self, EvalError> {
        if !uncertainty.is_finite() {
            return Err(EvalError::NonFiniteScore);
        }
        Ok(Self {
            uncertainty,
            correct,
        })
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn correct(&self) -> bool {
        self.correct
    }
}

/// P(random incorrect item scores strictly higher than random correct item),
/// ties credited one half. `None` when either class is empty.
pub fn auroc(items: &[LabeledScore]) -> Option<f64> {
    let positives = items.iter().filter(|s| !s.correct).count() as u64;
    let negatives = items.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return None;
    }
    let mut sorted: Vec<&LabeledScore> = items.iter().collect();
    sorted.sort_by(|a, b| a.uncertainty.total_cmp(&b.uncertainty));

    // Twice the Mann-Whitney U statistic, kept in integers.
    let mut twice_u: u64 = 0;
    let mut negatives_below: u64 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < sorted.len() && sorted[j].uncertainty == sorted[i].uncertainty {
            if sorted[j].correct {
                neg += 1;
            } else {
                pos += 1;
            }
            j += 1;
        }
        twice_u += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    Some(twice_u as f64 / (2 * positives * negatives) as f64)
}

/// Index of the lowest score, first index on ties.
pub fn best_of_n_select(scores: &[f64]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_nan())
        .fold(None, |best, (i, &s)| match best {
            Some((_, b)) if s >= b => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i)
}

/// Per-sample uncertainty scores with per-sample correctness for one prompt.
#[derive(Debug, Clone, Copy)]
pub struct SelectionRecord<'a> {
    pub scores: &'a [f64],
    pub correct: &'a [bool],
}

/// Fraction of records whose selected sample is correct; `None` when there
/// are no records.
pub fn best_of_n_accuracy(records: &[SelectionRecord<'_>]) -> Result<Option<f64>, EvalError> {
    let mut hits = 0usize;
    for (index, r) in records.iter().enumerate() {
        if r.scores.len() != r.correct.len() {
            return Err(EvalError::LengthMismatch {
                index,
                scores: r.scores.len(),
                labels: r.correct.len(),
            });
        }
        if let Some(pick) = best_of_n_select(r.scores) {
            hits += usize::from(r.correct[pick]);
        }
    }
    if records.is_empty() {
        return Ok(None);
    }
    Ok(Some(hits as f64 / records.len() as f64))
}

/// Diagnostics for one prompt in an evaluation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptRow {
    pub id: String,
    pub dataset_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub selected: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub selected_correct: BTreeMap<String, bool>,
}

/// Aggregate metrics over one slice of prompts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceSummary {
    pub n_prompts: usize,
    pub n_correct: usize,
    /// `null` marks an undefined AUROC (single-class slice).
    pub auroc_by_method: BTreeMap<String, Option<f64>>,
    pub best_of_n_accuracy_by_method: BTreeMap<String, Option<f64>>,
    /// Prompts that contributed to each metric.
    pub n_by_method: BTreeMap<String, usize>,
}

impl SliceSummary {
    fn from_rows<'a>(
        rows: impl Iterator<Item = &'a PromptRow> + Clone,
        auroc_methods: &[String],
        selection_methods: &[String],
    ) -> Self {
        let mut summary = SliceSummary {
            n_prompts: rows.clone().count(),
            n_correct: rows.clone().filter(|r| r.correct == Some(true)).count(),
            ..Default::default()
        };
        for method in auroc_methods {
            // Scores are validated finite before they reach a row.
            let items: Vec<LabeledScore> = rows
                .clone()
                .filter_map(|r| Some((r.scores.get(method)?, r.correct?)))
                .filter_map(|(s, c)| LabeledScore::new(*s, c).ok())
                .collect();
            summary
                .n_by_method
                .insert(format!("auroc:{method}"), items.len());
            summary.auroc_by_method.insert(method.clone(), auroc(&items));
        }
        for method in selection_methods {
            let outcomes: Vec<bool> = rows
                .clone()
                .filter_map(|r| r.selected_correct.get(method).copied())
                .collect();
            let acc = if outcomes.is_empty() {
                None
            } else {
                Some(outcomes.iter().filter(|&&c| c).count() as f64 / outcomes.len() as f64)
            };
            summary
                .n_by_method
                .insert(format!("best_of_n:{method}"), outcomes.len());
            summary
                .best_of_n_accuracy_by_method
                .insert(method.clone(), acc);
        }
        summary
    }
}

/// AUROC and best-of-N tables with per-prompt diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub overall: SliceSummary,
    /// The same metrics restricted to each `dataset_tag`.
    pub slices: BTreeMap<String, SliceSummary>,
    pub per_prompt_rows: Vec<PromptRow>,
}

/// Slice label used for the whole-run rows in CSV output.
pub const ALL_SLICE: &str = "all";

impl EvalReport {
    pub fn from_rows(
        rows: Vec<PromptRow>,
        auroc_methods: &[String],
        selection_methods: &[String],
    ) -> Self {
        let overall = SliceSummary::from_rows(rows.iter(), auroc_methods, selection_methods);
        let mut tags: Vec<&str> = rows.iter().map(|r| r.dataset_tag.as_str()).collect();
        tags.sort_unstable();
        tags.dedup();
        let slices = tags
            .into_iter()
            .map(|tag| {
                let slice = SliceSummary::from_rows(
                    rows.iter().filter(move |r| r.dataset_tag == tag),
                    auroc_methods,
                    selection_methods,
                );
                (tag.to_string(), slice)
            })
            .collect();
        Self {
            overall,
            slices,
            per_prompt_rows: rows,
        }
    }

    pub fn auroc(&self, method: &str) -> Option<f64> {
        self.overall.auroc_by_method.get(method).copied().flatten()
    }

    pub fn best_of_n_accuracy(&self, method: &str) -> Option<f64> {
        self.overall
            .best_of_n_accuracy_by_method
            .get(method)
            .copied()
            .flatten()
    }

    /// Flat table: `method,metric,value,n,dataset`, undefined values as `NA`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["method", "metric", "value", "n", "dataset"])?;
        let slices =
            std::iter::once((ALL_SLICE, &self.overall)).chain(self.slices.iter().map(|(k, v)| (k.as_str(), v)));
        for (tag, slice) in slices {
            for (metric, table) in [
                ("auroc", &slice.auroc_by_method),
                ("best_of_n", &slice.best_of_n_accuracy_by_method),
            ] {
                for (method, value) in table {
                    let n = slice
                        .n_by_method
                        .get(&format!("{metric}:{method}"))
                        .copied()
                        .unwrap_or(0);
                    let value = value.map_or_else(|| "NA".to_string(), |v| v.to_string());
                    out.write_record([method.as_str(), metric, &value, &n.to_string(), tag])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}
