//! Run settings: command-line flags over environment over config file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use rdskit_io::cache::{user_cache_dir, CACHE_DIR_ENV};
use rdskit_io::clients::{EndpointConfig, API_KEY_ENV};

/// Encoder used when none is named.
pub const DEFAULT_EMBED_MODEL: &str = "all-MiniLM-L6-v2";

/// Contents of a `--config` TOML file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub embed: EndpointSection,
    #[serde(default)]
    pub llm: EndpointSection,
    #[serde(default)]
    pub cache: CacheSection,
    #[serde(default)]
    pub run: RunSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSection {
    pub url: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub max_in_flight: Option<usize>,
    pub batch_size: Option<usize>,
    pub retry_backoff_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheSection {
    pub dir: Option<PathBuf>,
    pub enabled: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub workers: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
    }
}

/// Endpoint values given on the command line.
#[derive(Debug, Clone, Default)]
pub struct EndpointFlags {
    pub url: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: Option<f64>,
    pub max_retries: Option<u32>,
    pub max_in_flight: Option<usize>,
    pub batch_size: Option<usize>,
}

/// Looks up an environment variable, treating empty values as unset.
pub type EnvLookup<'a> = &'a dyn Fn(&str) -> Option<String>;

pub fn process_env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

/// Builds an endpoint config, or `None` when no URL is given anywhere.
/// The API key only ever comes from the environment.
pub fn resolve_endpoint(
    flags: &EndpointFlags,
    url_env: &str,
    file: &EndpointSection,
    default_model: Option<&str>,
    env: EnvLookup<'_>,
) -> anyhow::Result<Option<EndpointConfig>> {
    let Some(url) = flags.url.clone().or_else(|| env(url_env)).or_else(|| file.url.clone()) else {
        return Ok(None);
    };
    let model = flags
        .model
        .clone()
        .or_else(|| file.model.clone())
        .or_else(|| default_model.map(str::to_owned))
        .ok_or_else(|| anyhow::anyhow!("a model name is required for {url}"))?;
    let mut cfg = EndpointConfig::new(url, model).with_api_key(env(API_KEY_ENV));
    if let Some(t) = flags.timeout_secs.or(file.timeout_secs) {
        if !(t.is_finite() && t > 0.0) {
            anyhow::bail!("timeout must be a positive number of seconds, got {t}");
        }
        cfg.timeout = Duration::from_secs_f64(t);
    }
    if let Some(r) = flags.max_retries.or(file.max_retries) {
        cfg.max_retries = r;
    }
    if let Some(m) = flags.max_in_flight.or(file.max_in_flight) {
        cfg.max_in_flight = m;
    }
    if let Some(b) = flags.batch_size.or(file.batch_size) {
        cfg.batch_size = b;
    }
    if let Some(ms) = file.retry_backoff_ms {
        cfg.retry_backoff = Duration::from_millis(ms);
    }
    cfg.validate()?;
    Ok(Some(cfg))
}

/// Cache root, or `None` when caching is switched off.
pub fn resolve_cache_dir(
    flag: Option<&Path>,
    disabled: bool,
    file: &CacheSection,
    env: EnvLookup<'_>,
) -> Option<PathBuf> {
    if disabled || file.enabled == Some(false) {
        return None;
    }
    Some(
        flag.map(Path::to_path_buf)
            .or_else(|| env(CACHE_DIR_ENV).map(PathBuf::from))
            .or_else(|| file.dir.clone())
            .unwrap_or_else(user_cache_dir),
    )
}
