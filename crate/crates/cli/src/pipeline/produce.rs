use std::collections::HashSet;

use anyhow::{anyhow, bail, Context};

use rdskit_core::exec::{with_workers, Execution};
use rdskit_io::clients::{ClientError, SamplingConfig};
use rdskit_io::{read_jsonl, write_jsonl, PromptRecord, PromptSpec, SCHEMA_VERSION};

use super::{check_output, load_records, resolve_embeddings, write_output, IoOptions, Resources, RunSummary};

#[derive(Debug, Clone)]
pub struct EmbedOptions {
    pub io: IoOptions,
}

/// Rewrites records with every sample embedding inline.
pub fn cmd_embed(opts: &EmbedOptions, res: &Resources) -> anyhow::Result<RunSummary> {
    check_output(opts.io.output.as_deref(), opts.io.force, &[&opts.io.input])?;
    let loaded = load_records(&opts.io)?;
    let mut records = loaded.records;
    resolve_embeddings(&mut records, res)?;
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records)?;
    write_output(opts.io.output.as_deref(), &buf)?;
    Ok(RunSummary {
        read: records.len() + loaded.diagnostics.len(),
        scored: records.len(),
        skipped: loaded.diagnostics.len(),
        network_calls: res.network_calls(),
        without_logprobs: 0,
    })
}

#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub io: IoOptions,
    pub sampling: SamplingConfig,
    pub workers: Option<usize>,
}

/// Draws a greedy answer and N samples per prompt.
pub fn cmd_sample(opts: &SampleOptions, res: &Resources) -> anyhow::Result<RunSummary> {
    check_output(opts.io.output.as_deref(), opts.io.force, &[&opts.io.input])?;
    let sampler = res.sampler.as_ref().ok_or_else(|| {
        anyhow!("no generation endpoint configured; set --llm-url or RDSKIT_LLM_URL")
    })?;
    let specs: Vec<PromptSpec> = read_jsonl(&opts.io.input).with_context(|| format!("reading {}", opts.io.input.display()))?;
    let mut seen = HashSet::new();
    for s in &specs {
        if s.v != SCHEMA_VERSION {
            bail!("prompt `{}`: unsupported schema version {}", s.id, s.v);
        }
        if !seen.insert(s.id.as_str()) {
            bail!("duplicate prompt id `{}`", s.id);
        }
    }

    let results = with_workers(opts.workers, || {
        Execution::Parallel.map(&specs, |spec| {
            let greedy = sampler.greedy(&spec.prompt, &opts.sampling)?;
            let samples = match sampler.sample_generations(&spec.prompt, &opts.sampling) {
                Ok(s) => s,
                Err(ClientError::PartialBatch { received, requested }) if !opts.io.strict && !received.is_empty() => {
                    log::warn!(
                        "prompt `{}`: kept {} of {requested} samples",
                        spec.id,
                        received.len()
                    );
                    received
                }
                Err(e) => return Err(e),
            };
            Ok(spec.clone().into_record(greedy, samples))
        })
    });
    let mut records: Vec<PromptRecord> = Vec::with_capacity(specs.len());
    for (spec, r) in specs.iter().zip(results) {
        records.push(r.with_context(|| format!("sampling prompt `{}`", spec.id))?);
    }
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records)?;
    write_output(opts.io.output.as_deref(), &buf)?;
    Ok(RunSummary {
        read: specs.len(),
        scored: records.len(),
        skipped: 0,
        network_calls: res.network_calls(),
        without_logprobs: records
            .iter()
            .filter(|r| r.samples.iter().any(|s| s.token_logprobs.is_none()))
            .count(),
    })
}
