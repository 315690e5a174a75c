use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rdskit::methods::{parse_methods, Method};
use rdskit::pipeline::{
    cmd_bestofn, cmd_embed, cmd_evaluate, cmd_sample, cmd_score, cmd_simulate, BestOfNOptions, Correctness,
    CorrectnessKind, EmbedOptions, EvalOptions, IoOptions, Resources, RunSummary, SampleOptions, ScoreOptions,
    SimulateOptions,
};
use rdskit::settings::{
    process_env, resolve_cache_dir, resolve_endpoint, EndpointFlags, FileConfig, DEFAULT_EMBED_MODEL,
};
use rdskit_core::baselines::ExtractionMode;
use rdskit_core::evaluation::DEFAULT_ROUGE_THRESHOLD;
use rdskit_core::Regime;
use rdskit_io::clients::{EmbeddingClient, SamplingClient, SamplingConfig, EMBED_URL_ENV, LLM_URL_ENV};
use rdskit_io::EmbeddingCache;

#[derive(Parser)]
#[command(name = "rdskit", version, about = "Radial dispersion uncertainty scoring for sampled LLM generations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML file with endpoint, cache and run defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Write one score row per record.
    Score(ScoreArgs),
    /// AUROC of prompt-level scores against greedy correctness.
    Evaluate(EvaluateArgs),
    /// Best-of-N selection accuracy of per-sample scores.
    Bestofn(BestOfNArgs),
    /// Fill in sample embeddings from the cache or an endpoint.
    Embed(EmbedArgs),
    /// Draw greedy and sampled completions for each prompt.
    Sample(SampleArgs),
    /// Write synthetic regime sweeps as CSV.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct IoArgs {
    #[arg(long)]
    input: PathBuf,
    /// Standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
    /// Abort on the first malformed record instead of skipping it.
    #[arg(long)]
    strict: bool,
    /// Binary file with sample embeddings in record order.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorrectnessArg {
    Exact,
    Rouge,
}

#[derive(Args)]
struct CorrectnessArgs {
    /// Overrides each record's correctness_mode.
    #[arg(long, value_enum)]
    correctness: Option<CorrectnessArg>,
    #[arg(long, default_value_t = DEFAULT_ROUGE_THRESHOLD)]
    rouge_threshold: f64,
    /// Count F1 equal to the threshold as correct.
    #[arg(long)]
    rouge_inclusive: bool,
    /// Answer extraction for exact match: last_number, normalized_full or regex:<pattern>.
    #[arg(long, default_value = "last_number")]
    extract: String,
}

impl CorrectnessArgs {
    fn resolve(&self) -> anyhow::Result<Correctness> {
        if !(0.0..=1.0).contains(&self.rouge_threshold) {
            anyhow::bail!("--rouge-threshold must lie in [0, 1]");
        }
        Ok(Correctness {
            kind: self.correctness.map(|c| match c {
                CorrectnessArg::Exact => CorrectnessKind::Exact,
                CorrectnessArg::Rouge => CorrectnessKind::Rouge,
            }),
            rouge_threshold: self.rouge_threshold,
            rouge_inclusive: self.rouge_inclusive,
            extraction: ExtractionMode::parse(&self.extract)?,
        })
    }
}

#[derive(Args, Default)]
struct EndpointArgs {
    /// Embeddings endpoint base URL [env: RDSKIT_EMBED_URL].
    #[arg(long)]
    embed_url: Option<String>,
    /// Embedding model; also the cache namespace.
    #[arg(long)]
    embed_model: Option<String>,
    /// Chat-completions endpoint base URL [env: RDSKIT_LLM_URL].
    #[arg(long)]
    llm_url: Option<String>,
    #[arg(long)]
    llm_model: Option<String>,
    /// Embedding cache root [env: RDSKIT_CACHE_DIR].
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    no_cache: bool,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    timeout_secs: Option<f64>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    io: IoArgs,
    #[command(flatten)]
    correctness: CorrectnessArgs,
    #[command(flatten)]
    endpoints: EndpointArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    io: IoArgs,
    #[command(flatten)]
    correctness: CorrectnessArgs,
    #[command(flatten)]
    endpoints: EndpointArgs,
    /// Comma list; defaults to every prompt-level method.
    #[arg(long)]
    methods: Option<String>,
    /// Score rows from `rdskit score` to use instead of rescoring.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// JSONL of {"id", "scores": {...}, "per_sample": {...}} for methods computed elsewhere.
    #[arg(long)]
    external: Option<PathBuf>,
    /// Also write the flat CSV table here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct BestOfNArgs {
    #[command(flatten)]
    io: IoArgs,
    #[command(flatten)]
    correctness: CorrectnessArgs,
    #[command(flatten)]
    endpoints: EndpointArgs,
    /// Comma list; defaults to every per-sample method.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    external: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    io: IoArgs,
    #[command(flatten)]
    endpoints: EndpointArgs,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    io: IoArgs,
    #[command(flatten)]
    endpoints: EndpointArgs,
    #[arg(long, default_value_t = 10)]
    n_samples: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 512)]
    max_tokens: usize,
    /// Do not request token log-probabilities.
    #[arg(long)]
    no_logprobs: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    /// Comma list of coherent, hemispheric, opposing.
    #[arg(long, default_value = "coherent,hemispheric,opposing", value_delimiter = ',')]
    regimes: Vec<Regime>,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Comma list of jitter scales.
    #[arg(long, default_value = "0", value_delimiter = ',')]
    noise: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    num_seeds: u64,
    #[arg(long)]
    workers: Option<usize>,
}

impl IoArgs {
    fn options(&self) -> IoOptions {
        IoOptions {
            input: self.input.clone(),
            output: self.output.clone(),
            force: self.force,
            strict: self.strict,
            sidecar: self.sidecar.clone(),
        }
    }
}

fn workers(flag: Option<usize>, file: &FileConfig) -> Option<usize> {
    flag.or(file.run.workers)
}

fn resources(args: &EndpointArgs, file: &FileConfig, want_embed: bool, want_llm: bool) -> anyhow::Result<Resources> {
    let env = process_env;
    let cache_dir = resolve_cache_dir(args.cache_dir.as_deref(), args.no_cache, &file.cache, &env);
    let cache = cache_dir.map(EmbeddingCache::new);
    let flags = |url: &Option<String>, model: &Option<String>| EndpointFlags {
        url: url.clone(),
        model: model.clone(),
        timeout_secs: args.timeout_secs,
        max_retries: args.max_retries,
        max_in_flight: args.max_in_flight,
        batch_size: args.batch_size,
    };
    let embed_flags = flags(&args.embed_url, &args.embed_model);
    let encoder_id = embed_flags
        .model
        .clone()
        .or_else(|| file.embed.model.clone())
        .unwrap_or_else(|| DEFAULT_EMBED_MODEL.to_string());
    let mut res = Resources::offline(cache.clone(), encoder_id);
    if want_embed {
        if let Some(cfg) = resolve_endpoint(&embed_flags, EMBED_URL_ENV, &file.embed, Some(DEFAULT_EMBED_MODEL), &env)? {
            log::info!("embedding endpoint: {cfg:?}");
            res.embedder = Some(EmbeddingClient::http(cfg, cache)?);
        }
    }
    if want_llm {
        let llm_flags = flags(&args.llm_url, &args.llm_model);
        if let Some(cfg) = resolve_endpoint(&llm_flags, LLM_URL_ENV, &file.llm, None, &env)? {
            log::info!("generation endpoint: {cfg:?}");
            res.sampler = Some(SamplingClient::http(cfg)?);
        }
    }
    Ok(res)
}

fn run(cli: Cli) -> anyhow::Result<RunSummary> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Score(a) => {
            let res = resources(&a.endpoints, &file, true, false)?;
            let opts = ScoreOptions {
                io: a.io.options(),
                correctness: a.correctness.resolve()?,
                workers: workers(a.io.workers, &file),
            };
            cmd_score(&opts, &res)
        }
        Command::Evaluate(a) => {
            let res = resources(&a.endpoints, &file, true, false)?;
            let methods = parse_methods(a.methods.as_deref(), &Method::PROMPT_LEVEL, a.external.is_some())
                .map_err(anyhow::Error::msg)?;
            let opts = EvalOptions {
                io: a.io.options(),
                correctness: a.correctness.resolve()?,
                methods,
                scores: a.scores,
                external: a.external,
                csv: a.csv,
                workers: workers(a.io.workers, &file),
            };
            let out = cmd_evaluate(&opts, &res)?;
            for (m, v) in &out.report.overall.auroc_by_method {
                eprintln!("auroc {m}: {}", v.map_or("undefined".into(), |v| format!("{v:.4}")));
            }
            Ok(out.summary)
        }
        Command::Bestofn(a) => {
            let res = resources(&a.endpoints, &file, true, false)?;
            let methods = parse_methods(a.methods.as_deref(), &Method::PER_SAMPLE, a.external.is_some())
                .map_err(anyhow::Error::msg)?;
            let opts = BestOfNOptions {
                io: a.io.options(),
                correctness: a.correctness.resolve()?,
                methods,
                external: a.external,
                csv: a.csv,
                workers: workers(a.io.workers, &file),
            };
            let out = cmd_bestofn(&opts, &res)?;
            for (m, v) in &out.report.overall.best_of_n_accuracy_by_method {
                eprintln!("best-of-N {m}: {}", v.map_or("undefined".into(), |v| format!("{v:.4}")));
            }
            Ok(out.summary)
        }
        Command::Embed(a) => {
            let res = resources(&a.endpoints, &file, true, false)?;
            cmd_embed(&EmbedOptions { io: a.io.options() }, &res)
        }
        Command::Sample(a) => {
            let res = resources(&a.endpoints, &file, false, true)?;
            let opts = SampleOptions {
                io: a.io.options(),
                sampling: SamplingConfig {
                    n: a.n_samples,
                    temperature: a.temperature,
                    max_tokens: a.max_tokens,
                    want_logprobs: !a.no_logprobs,
                    seed: a.seed,
                },
                workers: workers(a.io.workers, &file),
            };
            cmd_sample(&opts, &res)
        }
        Command::Simulate(a) => cmd_simulate(&SimulateOptions {
            output: a.output,
            force: a.force,
            regimes: a.regimes,
            n: a.n,
            dim: a.dim,
            noises: a.noise,
            clusters: a.clusters,
            seed: a.seed,
            num_seeds: a.num_seeds,
            workers: workers(a.workers, &file),
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(summary) => {
            eprintln!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
