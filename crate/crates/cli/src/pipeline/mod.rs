//! Subcommand implementations, callable in-process.

mod evaluate;
mod produce;
mod score;
mod simulate;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use rdskit_core::baselines::ExtractionMode;
use rdskit_core::evaluation::{CorrectnessMode, DEFAULT_ROUGE_THRESHOLD};
use rdskit_io::clients::{EmbeddingClient, SamplingClient};
use rdskit_io::{read_records, CorrectnessTag, Diagnostic, EmbeddingCache, PromptRecord, ReadOptions};

pub use evaluate::{cmd_bestofn, cmd_evaluate, BestOfNOptions, EvalOptions, EvalOutcome, ExternalRow};
pub use produce::{cmd_embed, cmd_sample, EmbedOptions, SampleOptions};
pub use score::{analyze_record, cmd_score, RecordAnalysis, ScoreOptions};
pub use simulate::{cmd_simulate, SimulateOptions};

/// Cache and endpoint handles shared by the subcommands.
pub struct Resources {
    pub cache: Option<EmbeddingCache>,
    /// Cache key namespace; the embedding model name.
    pub encoder_id: String,
    pub embedder: Option<EmbeddingClient>,
    pub sampler: Option<SamplingClient>,
}

impl Resources {
    /// No endpoints: inline embeddings and cache hits only.
    pub fn offline(cache: Option<EmbeddingCache>, encoder_id: impl Into<String>) -> Self {
        Self {
            cache,
            encoder_id: encoder_id.into(),
            embedder: None,
            sampler: None,
        }
    }

    pub fn network_calls(&self) -> u64 {
        self.embedder.as_ref().map_or(0, EmbeddingClient::network_calls)
            + self.sampler.as_ref().map_or(0, SamplingClient::network_calls)
    }
}

#[derive(Debug, Clone)]
pub struct IoOptions {
    pub input: PathBuf,
    /// Standard output when absent.
    pub output: Option<PathBuf>,
    pub force: bool,
    pub strict: bool,
    pub sidecar: Option<PathBuf>,
}

impl IoOptions {
    pub fn new(input: impl Into<PathBuf>, output: Option<PathBuf>) -> Self {
        Self {
            input: input.into(),
            output,
            force: false,
            strict: false,
            sidecar: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectnessKind {
    Exact,
    Rouge,
}

/// How greedy and sampled answers are labeled.
#[derive(Debug, Clone)]
pub struct Correctness {
    /// Overrides each record's own `correctness_mode` when set.
    pub kind: Option<CorrectnessKind>,
    pub rouge_threshold: f64,
    pub rouge_inclusive: bool,
    pub extraction: ExtractionMode,
}

impl Default for Correctness {
    fn default() -> Self {
        Self {
            kind: None,
            rouge_threshold: DEFAULT_ROUGE_THRESHOLD,
            rouge_inclusive: false,
            extraction: ExtractionMode::LastNumber,
        }
    }
}

impl Correctness {
    pub fn mode_for(&self, tag: CorrectnessTag) -> CorrectnessMode {
        let kind = self.kind.unwrap_or(match tag {
            CorrectnessTag::ExactMatch => CorrectnessKind::Exact,
            CorrectnessTag::RougeGate => CorrectnessKind::Rouge,
        });
        match kind {
            CorrectnessKind::Exact => CorrectnessMode::exact(self.extraction.clone()),
            CorrectnessKind::Rouge => CorrectnessMode::RougeGate {
                threshold: self.rouge_threshold,
                inclusive: self.rouge_inclusive,
            },
        }
    }
}

/// Counts reported at the end of every run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub read: usize,
    pub scored: usize,
    pub skipped: usize,
    pub network_calls: u64,
    /// Scored records without log-probabilities (their `rds_w` is null).
    pub without_logprobs: usize,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "records read: {}, scored: {}, skipped: {}, network calls: {}",
            self.read, self.scored, self.skipped, self.network_calls
        )?;
        if self.without_logprobs > 0 {
            write!(f, ", without log-probabilities: {}", self.without_logprobs)?;
        }
        Ok(())
    }
}

/// Fails early when `output` exists and `force` is off, or when it would
/// clobber an input.
pub(crate) fn check_output(output: Option<&Path>, force: bool, inputs: &[&Path]) -> anyhow::Result<()> {
    let Some(out) = output else {
        return Ok(());
    };
    if !out.exists() {
        return Ok(());
    }
    let out_real = fs::canonicalize(out).unwrap_or_else(|_| out.to_path_buf());
    for input in inputs {
        if fs::canonicalize(input).is_ok_and(|p| p == out_real) {
            bail!("output {} is also an input", out.display());
        }
    }
    if !force {
        bail!("refusing to overwrite {} (pass --force)", out.display());
    }
    Ok(())
}

pub(crate) fn write_output(output: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match output {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

pub(crate) struct Loaded {
    pub records: Vec<PromptRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

pub(crate) fn load_records(io: &IoOptions) -> anyhow::Result<Loaded> {
    let opts = ReadOptions {
        strict: io.strict,
        sidecar: io.sidecar.clone(),
    };
    let out = read_records(&io.input, &opts).with_context(|| format!("reading {}", io.input.display()))?;
    Ok(Loaded {
        records: out.records,
        diagnostics: out.diagnostics,
    })
}

/// Fills missing sample embeddings from the cache or the endpoint, for
/// records with at least two samples (fewer cannot be scored).
pub(crate) fn resolve_embeddings(records: &mut [PromptRecord], res: &Resources) -> anyhow::Result<()> {
    let missing: Vec<(usize, usize)> = records
        .iter()
        .enumerate()
        .filter(|(_, rec)| rec.samples.len() >= 2)
        .flat_map(|(r, rec)| {
            rec.samples
                .iter()
                .enumerate()
                .filter(|(_, s)| s.embedding.is_none())
                .map(move |(s, _)| (r, s))
        })
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    let texts: Vec<&str> = missing
        .iter()
        .map(|&(r, s)| records[r].samples[s].text.as_str())
        .collect();
    let vectors: Vec<Vec<f64>> = match (&res.embedder, &res.cache) {
        (Some(client), _) => client.embed_batch(&texts).context("embedding sample texts")?,
        (None, cache) => {
            let found: Vec<Option<Vec<f64>>> = texts
                .iter()
                .map(|t| cache.as_ref().and_then(|c| c.lookup(&res.encoder_id, t)))
                .collect();
            let absent = found.iter().filter(|v| v.is_none()).count();
            if absent > 0 {
                let first = missing[found.iter().position(Option::is_none).expect("absent > 0")].0;
                bail!(
                    "{absent} sample texts have no embedding (first in record `{}`): none inline and none cached for encoder `{}`. \
                     Configure an embedding endpoint with --embed-url or RDSKIT_EMBED_URL, or run `rdskit embed` first",
                    records[first].id,
                    res.encoder_id
                );
            }
            found.into_iter().map(|v| v.expect("checked")).collect()
        }
    };
    for ((r, s), v) in missing.into_iter().zip(vectors) {
        records[r].samples[s].embedding = Some(v);
    }
    Ok(())
}
