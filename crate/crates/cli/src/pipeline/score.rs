use anyhow::Context;

use rdskit_core::baselines::{extract_answer, self_consistency, self_consistency_per_sample, ExtractedAnswer, TokenLogprobs};
use rdskit_core::evaluation::CorrectnessMode;
use rdskit_core::exec::{with_workers, Execution};
use rdskit_core::{probs_from_anll, EmbeddingSet, ScoreSet};
use rdskit_io::{write_jsonl, Diagnostic, GenerationSample, PromptRecord, ScoreRow};

use super::{check_output, load_records, resolve_embeddings, write_output, Correctness, IoOptions, Resources, RunSummary};

#[derive(Debug, Clone)]
pub struct ScoreOptions {
    pub io: IoOptions,
    pub correctness: Correctness,
    pub workers: Option<usize>,
}

/// Everything computable for one record.
#[derive(Debug, Clone)]
pub struct RecordAnalysis {
    /// Dispersion scores, or why they could not be computed.
    pub dispersion: Result<ScoreSet, String>,
    pub greedy_anll: Option<f64>,
    pub greedy_nll: Option<f64>,
    pub sc: Option<f64>,
    pub sc_per_sample: Vec<f64>,
    /// Present only when every sample carries log-probabilities.
    pub sample_anll: Option<Vec<f64>>,
    pub sample_nll: Option<Vec<f64>>,
}

impl RecordAnalysis {
    pub fn score_row(&self, id: &str) -> Option<ScoreRow> {
        let d = self.dispersion.as_ref().ok()?;
        Some(ScoreRow {
            id: id.to_string(),
            rds: d.rds,
            rds_l2: d.rds_l2,
            rds_w: d.rds_w,
            eigen_embed: d.eigen_embed,
            per_sample: d.per_sample.clone(),
            per_sample_w: d.per_sample_w.clone(),
            anll: self.greedy_anll,
            nll: self.greedy_nll,
            self_consistency: self.sc,
        })
    }
}

fn logprobs(sample: &GenerationSample) -> Option<TokenLogprobs> {
    sample
        .token_logprobs
        .as_ref()
        .and_then(|lp| TokenLogprobs::new(lp.clone()).ok())
}

/// Scores one record. Dispersion needs N ≥ 2 embedded samples; the
/// weighted variant also needs log-probabilities on every sample.
pub fn analyze_record(rec: &PromptRecord, mode: &CorrectnessMode, with_dispersion: bool) -> RecordAnalysis {
    let lps: Option<Vec<TokenLogprobs>> = rec.samples.iter().map(logprobs).collect();
    let sample_anll: Option<Vec<f64>> = lps.as_ref().map(|v| v.iter().map(TokenLogprobs::anll).collect());
    let sample_nll: Option<Vec<f64>> = lps.as_ref().map(|v| v.iter().map(TokenLogprobs::nll).collect());
    let greedy = logprobs(&rec.greedy);

    let extraction = mode.voting_extraction();
    let answers: Vec<ExtractedAnswer> = rec.samples.iter().map(|s| extract_answer(&s.text, &extraction)).collect();

    let dispersion = if with_dispersion {
        dispersion_scores(rec, sample_anll.as_deref())
    } else {
        Err("dispersion not requested".into())
    };
    RecordAnalysis {
        dispersion,
        greedy_anll: greedy.as_ref().map(TokenLogprobs::anll),
        greedy_nll: greedy.as_ref().map(TokenLogprobs::nll),
        sc: self_consistency(&answers),
        sc_per_sample: self_consistency_per_sample(&answers),
        sample_anll,
        sample_nll,
    }
}

fn dispersion_scores(rec: &PromptRecord, sample_anll: Option<&[f64]>) -> Result<ScoreSet, String> {
    let n = rec.samples.len();
    if n < 2 {
        return Err(format!("{n} sample(s); dispersion needs at least 2"));
    }
    let vectors: Vec<&[f64]> = rec
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| s.embedding.as_deref().ok_or(format!("sample {i} has no embedding")))
        .collect::<Result<_, _>>()?;
    let set = EmbeddingSet::new(&vectors).map_err(|e| e.to_string())?;
    let weights = match sample_anll {
        Some(a) => Some(probs_from_anll(a).map_err(|e| e.to_string())?),
        None => None,
    };
    set.scores(weights.as_ref()).map_err(|e| e.to_string())
}

pub(crate) fn analyze_all(
    records: &[PromptRecord],
    correctness: &Correctness,
    with_dispersion: bool,
    workers: Option<usize>,
) -> Vec<RecordAnalysis> {
    with_workers(workers, || {
        Execution::Parallel.map(records, |r| {
            analyze_record(r, &correctness.mode_for(r.correctness_mode), with_dispersion)
        })
    })
}

/// Writes one score row per scorable record.
pub fn cmd_score(opts: &ScoreOptions, res: &Resources) -> anyhow::Result<RunSummary> {
    check_output(opts.io.output.as_deref(), opts.io.force, &[&opts.io.input])?;
    let loaded = load_records(&opts.io)?;
    let mut records = loaded.records;
    let mut diagnostics = loaded.diagnostics;
    let read = records.len() + diagnostics.len();

    resolve_embeddings(&mut records, res)?;
    let analyses = analyze_all(&records, &opts.correctness, true, opts.workers);

    let mut rows = Vec::with_capacity(records.len());
    let mut without_logprobs = 0;
    for (rec, a) in records.iter().zip(&analyses) {
        match a.score_row(&rec.id) {
            Some(row) => {
                without_logprobs += usize::from(row.rds_w.is_none());
                rows.push(row);
            }
            None => {
                let why = a.dispersion.as_ref().err().cloned().unwrap_or_default();
                let diag = Diagnostic {
                    line: 0,
                    id: Some(rec.id.clone()),
                    message: format!("not scored: {why}"),
                };
                log::warn!("record `{}` {}", rec.id, diag.message);
                if opts.io.strict {
                    anyhow::bail!("record `{}` {}", rec.id, diag.message);
                }
                diagnostics.push(diag);
            }
        }
    }
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &rows).context("serializing score rows")?;
    write_output(opts.io.output.as_deref(), &buf)?;
    Ok(RunSummary {
        read,
        scored: rows.len(),
        skipped: diagnostics.len(),
        network_calls: res.network_calls(),
        without_logprobs,
    })
}
