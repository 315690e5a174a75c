use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use rdskit_core::evaluation::{best_of_n_select, label_correct, EvalReport, PromptRow};
use rdskit_io::{read_jsonl, PromptRecord, ScoreRow};

use super::score::{analyze_all, RecordAnalysis};
use super::{check_output, load_records, resolve_embeddings, write_output, Correctness, IoOptions, Resources, RunSummary};
use crate::methods::{Method, MethodSpec};

/// Scores computed elsewhere, joined by record id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExternalRow {
    pub id: String,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub per_sample: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub io: IoOptions,
    pub correctness: Correctness,
    pub methods: Vec<MethodSpec>,
    /// Precomputed score rows to use instead of rescoring.
    pub scores: Option<PathBuf>,
    pub external: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct BestOfNOptions {
    pub io: IoOptions,
    pub correctness: Correctness,
    pub methods: Vec<MethodSpec>,
    pub external: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub summary: RunSummary,
}

fn load_external(path: Option<&PathBuf>) -> anyhow::Result<HashMap<String, ExternalRow>> {
    let Some(path) = path else {
        return Ok(HashMap::new());
    };
    let rows: Vec<ExternalRow> =
        read_jsonl(path).with_context(|| format!("reading external scores {}", path.display()))?;
    Ok(rows.into_iter().map(|r| (r.id.clone(), r)).collect())
}

fn require_references(records: &[PromptRecord]) -> anyhow::Result<()> {
    if let Some(r) = records.iter().find(|r| r.references.is_empty()) {
        bail!("record `{}` has no references; correctness cannot be labeled", r.id);
    }
    Ok(())
}

fn needs_embeddings(methods: &[MethodSpec]) -> bool {
    methods
        .iter()
        .any(|m| matches!(m, MethodSpec::Builtin(b) if b.needs_embeddings()))
}

fn method_names(methods: &[MethodSpec]) -> Vec<String> {
    methods.iter().map(|m| m.name().to_string()).collect()
}

fn write_report(report: &EvalReport, output: Option<&std::path::Path>, csv: Option<&std::path::Path>) -> anyhow::Result<()> {
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    write_output(output, &json)?;
    if let Some(path) = csv {
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        write_output(Some(path), &buf)?;
    }
    Ok(())
}

fn prompt_score(method: Method, a: &RecordAnalysis, row: Option<&ScoreRow>) -> Option<f64> {
    if let Some(row) = row {
        return match method {
            Method::Rds => Some(row.rds),
            Method::RdsL2 => Some(row.rds_l2),
            Method::RdsW => row.rds_w,
            Method::EigenEmbed => Some(row.eigen_embed),
            Method::Anll => row.anll,
            Method::Nll => row.nll,
            Method::Sc => row.self_consistency,
            Method::RdsS | Method::RdsWS => None,
        };
    }
    let d = a.dispersion.as_ref().ok();
    match method {
        Method::Rds => d.map(|d| d.rds),
        Method::RdsL2 => d.map(|d| d.rds_l2),
        Method::RdsW => d.and_then(|d| d.rds_w),
        Method::EigenEmbed => d.map(|d| d.eigen_embed),
        Method::Anll => a.greedy_anll,
        Method::Nll => a.greedy_nll,
        Method::Sc => a.sc,
        Method::RdsS | Method::RdsWS => None,
    }
}

/// AUROC of each prompt-level method against greedy-answer correctness.
pub fn cmd_evaluate(opts: &EvalOptions, res: &Resources) -> anyhow::Result<EvalOutcome> {
    check_output(opts.io.output.as_deref(), opts.io.force, &[&opts.io.input])?;
    check_output(opts.csv.as_deref(), opts.io.force, &[&opts.io.input])?;
    let loaded = load_records(&opts.io)?;
    let mut records = loaded.records;
    require_references(&records)?;
    let external = load_external(opts.external.as_ref())?;
    let score_rows: Option<HashMap<String, ScoreRow>> = match &opts.scores {
        Some(path) => {
            let rows: Vec<ScoreRow> =
                read_jsonl(path).with_context(|| format!("reading scores {}", path.display()))?;
            Some(rows.into_iter().map(|r| (r.id.clone(), r)).collect())
        }
        None => None,
    };
    let rescore = score_rows.is_none() && needs_embeddings(&opts.methods);
    if rescore {
        resolve_embeddings(&mut records, res)?;
    }
    let analyses = analyze_all(&records, &opts.correctness, rescore, opts.workers);

    let mut rows = Vec::with_capacity(records.len());
    let mut scored = 0;
    for (rec, a) in records.iter().zip(&analyses) {
        let mode = opts.correctness.mode_for(rec.correctness_mode);
        let mut row = PromptRow {
            id: rec.id.clone(),
            dataset_tag: rec.dataset_tag.clone(),
            correct: Some(label_correct(&rec.greedy.text, &rec.references, &mode)),
            ..Default::default()
        };
        let precomputed = score_rows.as_ref().and_then(|m| m.get(&rec.id));
        for method in &opts.methods {
            let value = match method {
                MethodSpec::Builtin(m) => {
                    if score_rows.is_some() && precomputed.is_none() {
                        None
                    } else {
                        prompt_score(*m, a, precomputed)
                    }
                }
                MethodSpec::External(name) => external.get(&rec.id).and_then(|e| e.scores.get(name)).copied(),
            };
            if let Some(v) = value.filter(|v| v.is_finite()) {
                row.scores.insert(method.name().to_string(), v);
            }
        }
        scored += usize::from(!row.scores.is_empty());
        rows.push(row);
    }
    let report = EvalReport::from_rows(rows, &method_names(&opts.methods), &[]);
    write_report(&report, opts.io.output.as_deref(), opts.csv.as_deref())?;
    let summary = RunSummary {
        read: records.len() + loaded.diagnostics.len(),
        scored,
        skipped: loaded.diagnostics.len() + records.len() - scored,
        network_calls: res.network_calls(),
        without_logprobs: 0,
    };
    Ok(EvalOutcome { report, summary })
}

fn per_sample_scores(method: &MethodSpec, a: &RecordAnalysis, ext: Option<&ExternalRow>) -> Option<Vec<f64>> {
    match method {
        MethodSpec::Builtin(m) => match m {
            Method::RdsS => a.dispersion.as_ref().ok().map(|d| d.per_sample.clone()),
            Method::RdsWS => a.dispersion.as_ref().ok().and_then(|d| d.per_sample_w.clone()),
            Method::Anll => a.sample_anll.clone(),
            Method::Nll => a.sample_nll.clone(),
            Method::Sc => Some(a.sc_per_sample.clone()),
            _ => None,
        },
        MethodSpec::External(name) => ext.and_then(|e| e.per_sample.get(name)).cloned(),
    }
}

/// Accuracy of picking the lowest-uncertainty sample, per method.
pub fn cmd_bestofn(opts: &BestOfNOptions, res: &Resources) -> anyhow::Result<EvalOutcome> {
    check_output(opts.io.output.as_deref(), opts.io.force, &[&opts.io.input])?;
    check_output(opts.csv.as_deref(), opts.io.force, &[&opts.io.input])?;
    let loaded = load_records(&opts.io)?;
    let mut records = loaded.records;
    require_references(&records)?;
    let external = load_external(opts.external.as_ref())?;
    let with_dispersion = needs_embeddings(&opts.methods);
    if with_dispersion {
        resolve_embeddings(&mut records, res)?;
    }
    let analyses = analyze_all(&records, &opts.correctness, with_dispersion, opts.workers);

    let mut rows = Vec::with_capacity(records.len());
    let mut scored = 0;
    for (rec, a) in records.iter().zip(&analyses) {
        let mode = opts.correctness.mode_for(rec.correctness_mode);
        let correct: Vec<bool> = rec
            .samples
            .iter()
            .map(|s| label_correct(&s.text, &rec.references, &mode))
            .collect();
        let mut row = PromptRow {
            id: rec.id.clone(),
            dataset_tag: rec.dataset_tag.clone(),
            correct: Some(label_correct(&rec.greedy.text, &rec.references, &mode)),
            ..Default::default()
        };
        for method in &opts.methods {
            let pick = if rec.samples.len() == 1 {
                Some(0)
            } else {
                per_sample_scores(method, a, external.get(&rec.id))
                    .filter(|s| s.len() == rec.samples.len())
                    .and_then(|s| best_of_n_select(&s))
            };
            if let Some(i) = pick {
                row.selected.insert(method.name().to_string(), i);
                row.selected_correct.insert(method.name().to_string(), correct[i]);
            }
        }
        scored += usize::from(!row.selected.is_empty());
        rows.push(row);
    }
    let report = EvalReport::from_rows(rows, &[], &method_names(&opts.methods));
    write_report(&report, opts.io.output.as_deref(), opts.csv.as_deref())?;
    let summary = RunSummary {
        read: records.len() + loaded.diagnostics.len(),
        scored,
        skipped: loaded.diagnostics.len() + records.len() - scored,
        network_calls: res.network_calls(),
        without_logprobs: 0,
    };
    Ok(EvalOutcome { report, summary })
}
