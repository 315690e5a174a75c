//! JSON-Lines prompt records and score rows.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::sidecar::Sidecar;
use crate::{DataError, LOGPROB_SLACK};

/// Value of the `"v"` field every line must carry.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectnessTag {
    ExactMatch,
    RougeGate,
}

/// One sampled completion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationSample {
    pub text: String,
    /// Natural-log token probabilities as reported by the endpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl GenerationSample {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Default::default()
        }
    }
}

/// A prompt with its greedy answer, N sampled answers and references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub v: u32,
    pub id: String,
    pub prompt: String,
    pub greedy: GenerationSample,
    pub samples: Vec<GenerationSample>,
    pub references: Vec<String>,
    pub dataset_tag: String,
    pub correctness_mode: CorrectnessTag,
}

impl PromptRecord {
    /// Checks per-record invariants other than id uniqueness.
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.samples.is_empty() {
            return Err("no samples".into());
        }
        let mut dim = None;
        let all = std::iter::once(("greedy".to_string(), &self.greedy)).chain(
            self.samples
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("sample {i}"), s)),
        );
        for (label, sample) in all {
            if let Some(e) = &sample.embedding {
                if e.is_empty() {
                    return Err(format!("{label}: empty embedding"));
                }
                if e.iter().any(|x| !x.is_finite()) {
                    return Err(format!("{label}: non-finite embedding"));
                }
                match dim {
                    None => dim = Some(e.len()),
                    Some(d) if d != e.len() => {
                        return Err(format!(
                            "{label}: embedding dimension {} differs from {d}",
                            e.len()
                        ))
                    }
                    _ => {}
                }
            }
            if let Some(lp) = &sample.token_logprobs {
                if lp.is_empty() {
                    return Err(format!("{label}: empty token_logprobs"));
                }
                if lp.iter().any(|x| !x.is_finite() || *x > LOGPROB_SLACK) {
                    return Err(format!("{label}: token_logprobs must be finite and <= 0"));
                }
            }
        }
        Ok(())
    }

    /// Sample embeddings, if every sample has one.
    pub fn sample_embeddings(&self) -> Option<Vec<&[f64]>> {
        self.samples
            .iter()
            .map(|s| s.embedding.as_deref())
            .collect()
    }

    /// Sample token log-probabilities, if every sample has them.
    pub fn sample_logprobs(&self) -> Option<Vec<&[f64]>> {
        self.samples
            .iter()
            .map(|s| s.token_logprobs.as_deref())
            .collect()
    }
}

/// A prompt to be sampled: a record without generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub v: u32,
    pub id: String,
    pub prompt: String,
    pub references: Vec<String>,
    pub dataset_tag: String,
    pub correctness_mode: CorrectnessTag,
}

impl PromptSpec {
    pub fn into_record(self, greedy: GenerationSample, samples: Vec<GenerationSample>) -> PromptRecord {
        PromptRecord {
            v: self.v,
            id: self.id,
            prompt: self.prompt,
            greedy,
            samples,
            references: self.references,
            dataset_tag: self.dataset_tag,
            correctness_mode: self.correctness_mode,
        }
    }
}

/// Scores for one record; optional fields serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub rds: f64,
    pub rds_l2: f64,
    pub rds_w: Option<f64>,
    pub eigen_embed: f64,
    pub per_sample: Vec<f64>,
    pub per_sample_w: Option<Vec<f64>>,
    pub anll: Option<f64>,
    pub nll: Option<f64>,
    pub self_consistency: Option<f64>,
}

/// A problem with one input line that did not abort the read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.id {
            Some(id) => write!(f, "line {} ({id}): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReadOptions {
    /// Abort on the first bad line instead of skipping it.
    pub strict: bool,
    /// Binary file supplying sample embeddings in record order.
    pub sidecar: Option<PathBuf>,
}

/// Streaming reader over a JSONL file of [`PromptRecord`]s.
///
/// In lenient mode bad lines become [`Diagnostic`]s and are skipped. A
/// wrong schema version is always fatal, as is a malformed line when a
/// sidecar is in use (its rows could no longer be aligned).
pub struct RecordReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    strict: bool,
    seen: HashSet<String>,
    sidecar: Option<(Sidecar, usize)>,
    diagnostics: Vec<Diagnostic>,
    finished: bool,
}

impl RecordReader<BufReader<File>> {
    pub fn open(path: &Path, opts: &ReadOptions) -> Result<Self, DataError> {
        let file = File::open(path).map_err(|e| DataError::io(path, e))?;
        Self::new(BufReader::new(file), opts)
    }
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R, opts: &ReadOptions) -> Result<Self, DataError> {
        let sidecar = match &opts.sidecar {
            Some(path) => Some((Sidecar::read(path)?, 0)),
            None => None,
        };
        Ok(Self {
            lines: reader.lines(),
            line_no: 0,
            strict: opts.strict,
            seen: HashSet::new(),
            sidecar,
            diagnostics: Vec::new(),
            finished: false,
        })
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn into_diagnostics(self) -> Vec<Diagnostic> {
        self.diagnostics
    }

    fn skip(&mut self, id: Option<String>, message: String) -> Option<Result<PromptRecord, DataError>> {
        let diag = Diagnostic {
            line: self.line_no,
            id,
            message,
        };
        if self.strict {
            self.finished = true;
            return Some(Err(DataError::Invalid(diag)));
        }
        log::warn!("skipping {diag}");
        self.diagnostics.push(diag);
        None
    }

    fn fill_from_sidecar(&mut self, record: &mut PromptRecord) -> Result<(), DataError> {
        let Some((sidecar, cursor)) = &mut self.sidecar else {
            return Ok(());
        };
        for sample in &mut record.samples {
            let row = sidecar.row(*cursor).ok_or(DataError::SidecarShort {
                line: self.line_no,
                rows: sidecar.len(),
            })?;
            *cursor += 1;
            if sample.embedding.is_none() {
                sample.embedding = Some(row.iter().map(|&x| f64::from(x)).collect());
            }
        }
        Ok(())
    }

    fn finish(&mut self) -> Option<Result<PromptRecord, DataError>> {
        self.finished = true;
        if let Some((sidecar, cursor)) = &self.sidecar {
            let leftover = sidecar.len() - *cursor;
            if leftover > 0 {
                let message = format!("{leftover} sidecar rows were not used by any sample");
                if self.strict {
                    return Some(Err(DataError::Sidecar(message)));
                }
                log::warn!("{message}");
                self.diagnostics.push(Diagnostic {
                    line: self.line_no,
                    id: None,
                    message,
                });
            }
        }
        None
    }
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<PromptRecord, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        while !self.finished {
            let line = match self.lines.next() {
                None => return self.finish(),
                Some(Err(e)) => {
                    self.finished = true;
                    return Some(Err(DataError::Read(e)));
                }
                Some(Ok(line)) => line,
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = match serde_json::from_str(&line) {
                Ok(v) => v,
                Err(e) => {
                    if self.sidecar.is_some() {
                        self.finished = true;
                        return Some(Err(DataError::SidecarAlignment { line: self.line_no }));
                    }
                    match self.skip(None, format!("invalid JSON: {e}")) {
                        Some(err) => return Some(err),
                        None => continue,
                    }
                }
            };
            let id = value.get("id").and_then(|v| v.as_str()).map(str::to_owned);
            match value.get("v").and_then(serde_json::Value::as_u64) {
                Some(v) if v == u64::from(SCHEMA_VERSION) => {}
                found => {
                    self.finished = true;
                    return Some(Err(DataError::SchemaVersion {
                        line: self.line_no,
                        found: found.map(|v| v.to_string()).unwrap_or_else(|| "missing".into()),
                    }));
                }
            }
            let mut record: PromptRecord = match serde_json::from_value(value.clone()) {
                Ok(r) => r,
                Err(e) => {
                    if self.sidecar.is_some() {
                        // Keep rows aligned when the samples array itself is readable.
                        let samples = value.get("samples").and_then(|s| s.as_array()).map(Vec::len);
                        match samples {
                            Some(n) => {
                                if let Some((_, cursor)) = &mut self.sidecar {
                                    *cursor += n;
                                }
                            }
                            None => {
                                self.finished = true;
                                return Some(Err(DataError::SidecarAlignment { line: self.line_no }));
                            }
                        }
                    }
                    match self.skip(id, format!("schema error: {e}")) {
                        Some(err) => return Some(err),
                        None => continue,
                    }
                }
            };
            if let Err(e) = self.fill_from_sidecar(&mut record) {
                self.finished = true;
                return Some(Err(e));
            }
            if let Err(msg) = record.validate() {
                match self.skip(Some(record.id), msg) {
                    Some(err) => return Some(err),
                    None => continue,
                }
            }
            if !self.seen.insert(record.id.clone()) {
                if self.strict {
                    self.finished = true;
                    return Some(Err(DataError::DuplicateId {
                        line: self.line_no,
                        id: record.id,
                    }));
                }
                let id = record.id.clone();
                self.skip(Some(id), "duplicate id".into());
                continue;
            }
            return Some(Ok(record));
        }
        None
    }
}

/// Records and per-line diagnostics from one file.
#[derive(Debug, Default)]
pub struct ReadOutcome {
    pub records: Vec<PromptRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn read_records(path: &Path, opts: &ReadOptions) -> Result<ReadOutcome, DataError> {
    let mut reader = RecordReader::open(path, opts)?;
    let records = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(ReadOutcome {
        records,
        diagnostics: reader.into_diagnostics(),
    })
}

/// Reads a JSONL file of items without record validation.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(DataError::Read)?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            DataError::Invalid(Diagnostic {
                line: i + 1,
                id: None,
                message: e.to_string(),
            })
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Writes one compact JSON object per line.
pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}
