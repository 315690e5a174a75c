//! Record I/O, the embedding cache and endpoint clients.

pub mod cache;
pub mod clients;
pub mod records;
pub mod sidecar;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use cache::{CacheError, EmbeddingCache};
pub use records::{
    read_jsonl, read_records, write_jsonl, CorrectnessTag, Diagnostic, GenerationSample,
    PromptRecord, PromptSpec, ReadOptions, ReadOutcome, RecordReader, ScoreRow, SCHEMA_VERSION,
};
pub use sidecar::Sidecar;

/// Slack allowed above zero for a natural-log token probability.
pub const LOGPROB_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("read failed: {0}")]
    Read(std::io::Error),
    #[error("line {line}: unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { line: usize, found: String },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("invalid record at {0}")]
    Invalid(Diagnostic),
    #[error("sidecar: {0}")]
    Sidecar(String),
    #[error("line {line}: unparseable line while reading embeddings from a sidecar")]
    SidecarAlignment { line: usize },
    #[error("line {line}: sidecar has only {rows} rows")]
    SidecarShort { line: usize, rows: usize },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
