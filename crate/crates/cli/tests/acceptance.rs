//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints its PASS/FAIL line, then exits non-zero if any failed.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use rdskit::{
    cmd_bestofn, cmd_evaluate, cmd_score, cmd_simulate, BestOfNOptions, Correctness, EvalOptions, IoOptions,
    Method, MethodSpec, Resources, ScoreOptions, SimulateOptions,
};
use rdskit_core::evaluation::{auroc, rouge_l_f1, LabeledScore};
use rdskit_core::regime_sim::{generate, Regime, RegimeConfig};
use rdskit_core::{EmbeddingSet, ProbabilityWeights};
use rdskit_io::clients::{EmbeddingClient, EndpointConfig, Transport, TransportError};
use rdskit_io::{read_records, write_jsonl, EmbeddingCache, ReadOptions};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const ENCODER: &str = "all-MiniLM-L6-v2";

fn main() {
    let criteria: [Criterion; 11] = [
        ("01 dispersion chain", chain),
        ("02 zero-centroid cosine", zero_centroid),
        ("03 eigen-embed identity", eigen_identity),
        ("04 regime bands", regime_bands),
        ("05 weighted reductions", weighted_reductions),
        ("06 auroc oracle", auroc_oracle),
        ("07 rouge-l oracle", rouge_oracle),
        ("08 end-to-end auroc", end_to_end),
        ("09 best-of-n pipeline", best_of_n),
        ("10 reproducibility", reproducibility),
        ("11 client contract", client_contract),
    ];
    let start = Instant::now();
    let default_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    panic::set_hook(default_hook);
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

// ---- random sets -------------------------------------------------------

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Unit vectors: isotropic, one tight cluster, or two antipodal clusters.
fn random_set(rng: &mut ChaCha8Rng, d: usize, n: usize, shape: usize) -> Vec<Vec<f64>> {
    let base = unit(gaussian(rng, d));
    (0..n)
        .map(|i| match shape {
            0 => unit(gaussian(rng, d)),
            1 => unit(base.iter().zip(gaussian(rng, d)).map(|(b, g)| b + 0.1 * g).collect()),
            _ => {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                unit(base.iter().zip(gaussian(rng, d)).map(|(b, g)| sign * b + 0.05 * g).collect())
            }
        })
        .collect()
}

fn sets(count: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let d = [2, 8, 384][i % 3];
            let n = [2, 5, 10, 40][(i / 3) % 4];
            random_set(&mut rng, d, n, i % 5 % 3)
        })
        .collect()
}

// ---- oracles -----------------------------------------------------------

fn oracle_mean(vs: &[Vec<f64>], p: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; vs[0].len()];
    for (v, w) in vs.iter().zip(p) {
        for (ci, x) in c.iter_mut().zip(v) {
            *ci += w * x;
        }
    }
    c
}

fn oracle_rds(vs: &[Vec<f64>]) -> f64 {
    let n = vs.len();
    let c = oracle_mean(vs, &vec![1.0 / n as f64; n]);
    vs.iter()
        .map(|v| v.iter().zip(&c).map(|(x, m)| (x - m).abs()).sum::<f64>())
        .sum()
}

fn brute_auroc(items: &[(f64, bool)]) -> Option<f64> {
    let pos: Vec<f64> = items.iter().filter(|(_, c)| !c).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = items.iter().filter(|(_, c)| *c).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for q in &neg {
            wins += match p.partial_cmp(q).unwrap() {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

fn dp_lcs(a: &[&str], b: &[&str]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

// ---- criteria ----------------------------------------------------------

fn chain() -> Outcome {
    let slack = 1e-9;
    let mut violations = 0;
    for vs in sets(1000, 1) {
        let s = EmbeddingSet::new(&vs).map_err(|e| e.to_string())?;
        let (rds, ee, n) = (s.rds(), s.eigen_embed(), s.len() as f64);
        let mid = (n * ee).sqrt();
        if rds + slack < mid || mid + slack < n.sqrt() * ee || n.sqrt() * ee + slack < ee {
            violations += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} violations"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for &(d, n) in &[(2, 2), (8, 5), (384, 10), (8, 40)] {
        let v = unit(gaussian(&mut rng, d));
        let s = EmbeddingSet::new(&vec![v; n]).map_err(|e| e.to_string())?;
        ensure(s.rds() == 0.0 && s.eigen_embed() == 0.0, || {
            format!("identical set d={d} n={n}: rds={} ee={}", s.rds(), s.eigen_embed())
        })?;
    }
    Ok("1000 sets, 0 violations at 1e-9; identical sets give exactly 0".into())
}

fn zero_centroid() -> Outcome {
    let mut checked = 0;
    for dim in [1usize, 2, 3, 5, 8] {
        for k in 2..=dim + 1 {
            for per in [1usize, 2, 3, 5] {
                let n = k * per;
                if n < 2 {
                    continue;
                }
                for seed in 0..3 {
                    let cfg = RegimeConfig::new(Regime::Opposing, n, dim, seed).with_clusters(k);
                    let s = generate(&cfg).map_err(|e| e.to_string())?;
                    let want = -1.0 / (n as f64 - 1.0);
                    let got = s.avg_pairwise_cosine();
                    ensure((got - want).abs() <= 1e-6, || {
                        format!("k={k} n={n} d={dim}: avg cosine {got}, want {want}")
                    })?;
                    for i in 0..n {
                        let has_partner = (0..n).any(|j| {
                            j != i && s.vector(i).iter().zip(s.vector(j)).map(|(a, b)| a * b).sum::<f64>() < 0.0
                        });
                        ensure(has_partner, || format!("k={k} n={n} d={dim}: sample {i} has no opposing partner"))?;
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} constructions within 1e-6"))
}

fn eigen_identity() -> Outcome {
    let mut worst = 0.0f64;
    for vs in sets(1000, 3) {
        let s = EmbeddingSet::new(&vs).map_err(|e| e.to_string())?;
        let n = vs.len();
        let c = oracle_mean(&vs, &vec![1.0 / n as f64; n]);
        let spread = vs
            .iter()
            .map(|v| v.iter().zip(&c).map(|(x, m)| (x - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        let closed = 1.0 - c.iter().map(|x| x * x).sum::<f64>();
        for (a, b) in [
            (s.eigen_embed(), closed),
            (s.eigen_embed_from_centroid(), spread),
            (s.eigen_embed(), s.eigen_embed_from_centroid()),
        ] {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    Ok(format!("1000 sets, max deviation {worst:.1e}"))
}

fn regime_bands() -> Outcome {
    for seed in 0..5 {
        for (n, dim) in [(10, 2), (7, 384)] {
            let s = generate(&RegimeConfig::new(Regime::Coherent, n, dim, seed)).map_err(|e| e.to_string())?;
            ensure(s.rds() == 0.0 && s.eigen_embed() == 0.0, || {
                format!("coherent seed {seed}: rds={} ee={}", s.rds(), s.eigen_embed())
            })?;
        }
    }
    let s = generate(&RegimeConfig::new(Regime::Opposing, 10, 2, 0).with_clusters(2)).map_err(|e| e.to_string())?;
    let (rds, ee) = (s.rds(), s.eigen_embed());
    ensure((ee - 1.0).abs() <= 1e-9, || format!("opposing eigen_embed {ee}"))?;
    ensure((rds - 10.0).abs() <= 1e-9 && rds >= 10f64.sqrt(), || format!("opposing rds {rds}"))?;
    let in_band = (0..100)
        .filter(|&seed| {
            let s = generate(&RegimeConfig::new(Regime::Hemispheric, 10, 2, seed)).expect("hemispheric set");
            (0.7..=0.95).contains(&s.eigen_embed())
        })
        .count();
    ensure(in_band >= 95, || format!("hemispheric: {in_band}/100 seeds in [0.7, 0.95]"))?;
    Ok(format!("coherent 0 exactly; opposing rds={rds} ee={ee}; hemispheric {in_band}/100 in band"))
}

fn weighted_reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = [0.0f64; 3];
    for (i, vs) in sets(500, 4).into_iter().enumerate() {
        let s = EmbeddingSet::new(&vs).map_err(|e| e.to_string())?;
        let n = vs.len();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0f64).powi(1 + (i % 3) as i32)).collect();
        let total: f64 = raw.iter().sum();
        let p = ProbabilityWeights::new(raw.iter().map(|w| w / total).collect()).map_err(|e| e.to_string())?;
        let err = |e: rdskit_core::DispersionError| e.to_string();

        let uniform = s.rds_weighted(&ProbabilityWeights::uniform(n)).map_err(err)?;
        worst[0] = worst[0].max((uniform - s.rds() / n as f64).abs());

        let weighted = s.rds_weighted(&p).map_err(err)?;
        let per: f64 = s.rds_w_per_sample(&p).map_err(err)?.iter().zip(p.as_slice()).map(|(r, w)| r * w).sum();
        worst[1] = worst[1].max((per - weighted).abs() / weighted.abs().max(f64::MIN_POSITIVE));

        let sum: f64 = s.rds_per_sample().iter().sum();
        worst[2] = worst[2].max((sum - s.rds()).abs());
    }
    ensure(worst[0] <= 1e-9, || format!("uniform weights off by {:e}", worst[0]))?;
    ensure(worst[1] <= 1e-6, || format!("weighted sum off by {:e} relative", worst[1]))?;
    ensure(worst[2] <= 1e-9, || format!("per-sample sum off by {:e}", worst[2]))?;
    Ok(format!(
        "500 pairs; deviations {:.1e}, {:.1e} rel, {:.1e}",
        worst[0], worst[1], worst[2]
    ))
}

fn auroc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut undefined = 0;
    for i in 0..200 {
        let len = rng.random_range(1..=80);
        let tie_heavy = i % 2 == 0;
        let items: Vec<(f64, bool)> = (0..len)
            .map(|_| {
                let score = if tie_heavy {
                    f64::from(rng.random_range(0..4u8))
                } else {
                    rng.random_range(-5.0..5.0)
                };
                (score, rng.random_bool(0.4))
            })
            .collect();
        let labeled: Vec<LabeledScore> = items
            .iter()
            .map(|&(s, c)| LabeledScore::new(s, c).expect("finite score"))
            .collect();
        match (auroc(&labeled), brute_auroc(&items)) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => undefined += 1,
            (a, b) => return Err(format!("set {i}: fast {a:?} vs brute force {b:?}")),
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    Ok(format!("200 sets (100 tie-heavy, {undefined} single-class), max deviation {worst:.1e}"))
}

fn rouge_oracle() -> Outcome {
    const VOCAB: [&str; 8] = ["the", "cat", "sat", "on", "a", "mat", "dog", "ran"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..200 {
        let seq = |rng: &mut ChaCha8Rng| -> Vec<&str> {
            let len = rng.random_range(1..=30);
            (0..len).map(|_| *VOCAB.choose(rng).expect("vocab")).collect()
        };
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let lcs = dp_lcs(&a, &b);
        // 2PR/(P+R) reduces to 2·lcs/(m+n); one division of exact integers
        // is the correctly rounded value of that ratio.
        let want = (2 * lcs) as f64 / (a.len() + b.len()) as f64;
        let got = rouge_l_f1(&a.join(" "), &b.join(" "));
        ensure(got == want, || format!("pair {i}: {got} vs oracle {want} ({a:?} / {b:?})"))?;
    }
    let cat = rouge_l_f1("the cat sat", "the cat ran");
    ensure(cat == 2.0 / 3.0, || format!("\"the cat sat\" vs \"the cat ran\" = {cat}"))?;
    Ok("200 pairs exact; \"the cat sat\"/\"the cat ran\" = 2/3".into())
}

fn eval_opts(input: PathBuf, methods: &[Method]) -> EvalOptions {
    EvalOptions {
        io: IoOptions::new(input, Some(PathBuf::from("/dev/null"))),
        correctness: Correctness::default(),
        methods: methods.iter().copied().map(MethodSpec::Builtin).collect(),
        scores: None,
        external: None,
        csv: None,
        workers: None,
    }
}

fn with_force(mut opts: EvalOptions) -> EvalOptions {
    opts.io.force = true;
    opts
}

/// AUROC the fixture implies, from its raw embeddings and answers.
fn predicted_auroc(path: &Path) -> Result<f64, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut items = Vec::new();
    for line in text.lines() {
        let rec: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let vs: Vec<Vec<f64>> = rec["samples"]
            .as_array()
            .expect("samples")
            .iter()
            .map(|s| serde_json::from_value(s["embedding"].clone()).expect("embedding"))
            .collect();
        let greedy = rec["greedy"]["text"].as_str().expect("greedy");
        let answer = greedy.trim_end_matches('.').rsplit(' ').next().unwrap_or("");
        items.push((oracle_rds(&vs), answer == rec["references"][0]));
    }
    brute_auroc(&items).ok_or_else(|| "fixture has a single class".into())
}

fn end_to_end() -> Outcome {
    let res = Resources::offline(None, ENCODER);
    let sep = cmd_evaluate(&with_force(eval_opts(data("e2e_separable.jsonl"), &[Method::Rds, Method::RdsW])), &res)
        .map_err(|e| format!("{e:#}"))?;
    let (rds, rds_w) = (sep.report.auroc("rds"), sep.report.auroc("rds_w"));
    ensure(rds == Some(1.0) && rds_w == Some(1.0), || {
        format!("separable bundle: auroc rds={rds:?} rds_w={rds_w:?}")
    })?;

    let path = data("e2e_inverted.jsonl");
    let predicted = predicted_auroc(&path)?;
    let inv = cmd_evaluate(&with_force(eval_opts(path, &[Method::Rds])), &res).map_err(|e| format!("{e:#}"))?;
    let got = inv.report.auroc("rds");
    ensure(predicted == 0.8 && got == Some(predicted), || {
        format!("inverted bundle: auroc rds={got:?}, brute force predicts {predicted}")
    })?;
    Ok(format!("separable rds=rds_w=1.0; inverted rds={predicted} as predicted"))
}

fn best_of_n() -> Outcome {
    // Selected index per record and whether the pick is correct, worked out
    // by hand from the fixture. `None` marks a record excluded for lack of
    // log-probabilities on some sample.
    type Pick = Option<(usize, bool)>;
    let hand: [(&str, [Pick; 5]); 8] = [
        ("bon-1", [Some((0, true)), Some((0, true)), Some((0, true)), Some((1, true)), Some((0, true))]),
        ("bon-2", [Some((0, false)), Some((2, true)), Some((2, true)), Some((2, true)), Some((0, false))]),
        ("bon-3", [Some((1, true)), Some((1, true)), Some((0, true)), Some((0, true)), Some((0, true))]),
        ("bon-4", [Some((1, false)), Some((1, false)), Some((0, false)), Some((0, false)), Some((0, false))]),
        ("bon-5", [Some((0, false)), Some((0, false)), Some((0, false)), Some((0, false)), Some((0, false))]),
        ("bon-6", [Some((0, true)), Some((0, true)), Some((0, true)), Some((0, true)), Some((0, true))]),
        ("bon-7", [Some((0, true)), None, None, None, Some((0, true))]),
        ("bon-8", [Some((1, false)), Some((1, false)), Some((1, false)), Some((2, true)), Some((0, true))]),
    ];
    let methods = ["rds_s", "rds_w_s", "anll", "nll", "sc"];
    let accuracies = [4.0 / 8.0, 4.0 / 7.0, 4.0 / 7.0, 5.0 / 7.0, 5.0 / 8.0];

    let opts = BestOfNOptions {
        io: IoOptions {
            force: true,
            ..IoOptions::new(data("bestofn.jsonl"), Some(PathBuf::from("/dev/null")))
        },
        correctness: Correctness::default(),
        methods: [Method::RdsS, Method::RdsWS, Method::Anll, Method::Nll, Method::Sc]
            .map(MethodSpec::Builtin)
            .to_vec(),
        external: None,
        csv: None,
        workers: None,
    };
    let out = cmd_bestofn(&opts, &Resources::offline(None, ENCODER)).map_err(|e| format!("{e:#}"))?;
    let rows: BTreeMap<&str, _> = out.report.per_prompt_rows.iter().map(|r| (r.id.as_str(), r)).collect();
    for (id, picks) in &hand {
        let row = rows.get(id).ok_or_else(|| format!("{id} missing from report"))?;
        for (m, want) in methods.iter().zip(picks) {
            let got = row.selected.get(*m).map(|&i| (i, row.selected_correct[*m]));
            ensure(got == *want, || format!("{id} {m}: selected {got:?}, hand says {want:?}"))?;
        }
    }
    for (m, want) in methods.iter().zip(accuracies) {
        let got = out.report.best_of_n_accuracy(m);
        ensure(got == Some(want), || format!("{m}: accuracy {got:?}, hand says {want}"))?;
    }
    Ok("rds_s 4/8, rds_w_s 4/7, anll 4/7, nll 5/7, sc 5/8".into())
}

/// Counts calls; fails the test if any arrive.
struct NoNetwork(AtomicUsize);

impl Transport for NoNetwork {
    fn post_json(&self, _: &str, _: &Value) -> Result<Value, TransportError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Err(TransportError::Network("offline".into()))
    }
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cache = EmbeddingCache::new(dir.path().join("cache"));
    let mut records = read_records(&data("e2e_separable.jsonl"), &ReadOptions::default())
        .map_err(|e| e.to_string())?
        .records;
    for rec in &mut records {
        for s in &mut rec.samples {
            let v = s.embedding.take().expect("fixture embeds every sample");
            cache.store(ENCODER, &s.text, &v).map_err(|e| e.to_string())?;
        }
    }
    let input = dir.path().join("cached.jsonl");
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &records).map_err(|e| e.to_string())?;
    fs::write(&input, buf).map_err(|e| e.to_string())?;

    let transport = Arc::new(NoNetwork(AtomicUsize::new(0)));
    let embedder = EmbeddingClient::new(
        EndpointConfig::new("http://127.0.0.1:9", ENCODER),
        transport.clone(),
        Some(cache.clone()),
    )
    .map_err(|e| e.to_string())?;
    let res = Resources {
        embedder: Some(embedder),
        ..Resources::offline(Some(cache), ENCODER)
    };
    let mut outputs = Vec::new();
    for (run, workers) in [(1, None), (2, Some(1))] {
        let out = dir.path().join(format!("scores-{run}.jsonl"));
        let opts = ScoreOptions {
            io: IoOptions::new(&input, Some(out.clone())),
            correctness: Correctness::default(),
            workers,
        };
        let summary = cmd_score(&opts, &res).map_err(|e| format!("{e:#}"))?;
        ensure(summary.scored == 10 && summary.network_calls == 0, || format!("run {run}: {summary}"))?;
        outputs.push(fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure(transport.0.load(Ordering::SeqCst) == 0, || "cached scoring touched the network".into())?;
    ensure(!outputs[0].is_empty() && outputs[0] == outputs[1], || "score outputs differ".into())?;

    let mut csvs = Vec::new();
    for (run, workers) in [(1, None), (2, Some(1))] {
        let out = dir.path().join(format!("sweep-{run}.csv"));
        let opts = SimulateOptions {
            output: Some(out.clone()),
            noises: vec![0.0, 0.05, 0.2],
            num_seeds: 20,
            seed: 42,
            workers,
            ..Default::default()
        };
        cmd_simulate(&opts).map_err(|e| format!("{e:#}"))?;
        csvs.push(fs::read(&out).map_err(|e| e.to_string())?);
    }
    ensure(csvs[0] == csvs[1], || "simulate CSVs differ".into())?;
    Ok(format!(
        "score outputs identical ({} bytes, 0 network calls); sweep CSVs identical ({} bytes)",
        outputs[0].len(),
        csvs[0].len()
    ))
}

/// Embeddings endpoint that records every request and the concurrency it
/// observes. While `drop_first` is set, the first response omits inputs
/// whose text ends in an odd digit.
struct FakeEmbeddings {
    requests: Mutex<Vec<Vec<String>>>,
    active: AtomicUsize,
    peak: AtomicUsize,
    drop_first: bool,
    delay: Duration,
}

impl FakeEmbeddings {
    fn new(drop_first: bool, delay: Duration) -> Arc<Self> {
        Arc::new(Self {
            requests: Mutex::new(Vec::new()),
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            drop_first,
            delay,
        })
    }

    fn requests(&self) -> Vec<Vec<String>> {
        self.requests.lock().unwrap().clone()
    }
}

fn fake_vector(text: &str) -> Vec<f64> {
    let h = text.bytes().fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(u64::from(b)));
    vec![1.0 + (h % 97) as f64, (h % 89) as f64, 3.0]
}

impl Transport for FakeEmbeddings {
    fn post_json(&self, endpoint: &str, body: &Value) -> Result<Value, TransportError> {
        assert_eq!(endpoint, "embeddings");
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(self.delay);
        let inputs: Vec<String> = serde_json::from_value(body["input"].clone()).expect("input array");
        let first = {
            let mut reqs = self.requests.lock().unwrap();
            reqs.push(inputs.clone());
            reqs.len() == 1
        };
        let data: Vec<Value> = inputs
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                let odd = t.ends_with(['1', '3', '5', '7', '9']);
                !(self.drop_first && first && odd)
            })
            .map(|(i, t)| json!({"index": i, "embedding": fake_vector(t)}))
            .collect();
        self.active.fetch_sub(1, Ordering::SeqCst);
        Ok(json!({ "data": data }))
    }
}

fn config(max_in_flight: usize, batch_size: usize) -> EndpointConfig {
    EndpointConfig {
        max_in_flight,
        batch_size,
        retry_backoff: Duration::from_millis(1),
        ..EndpointConfig::new("http://fake", ENCODER)
    }
}

fn client_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cache = EmbeddingCache::new(dir.path());
    let texts: Vec<String> = (0..40).map(|i| format!("text {i}")).collect();

    // Cold then warm: the warm pass must be served entirely from the cache.
    let fake = FakeEmbeddings::new(false, Duration::ZERO);
    let client =
        EmbeddingClient::new(config(2, 16), fake.clone(), Some(cache.clone())).map_err(|e| e.to_string())?;
    let cold = client.embed_batch(&texts).map_err(|e| e.to_string())?;
    let calls_cold = client.network_calls();
    let warm_fake = FakeEmbeddings::new(false, Duration::ZERO);
    let warm_client =
        EmbeddingClient::new(config(2, 16), warm_fake.clone(), Some(cache)).map_err(|e| e.to_string())?;
    let warm = warm_client.embed_batch(&texts).map_err(|e| e.to_string())?;
    ensure(calls_cold == 3 && fake.requests().len() == 3, || format!("cold pass made {calls_cold} calls"))?;
    ensure(warm_client.network_calls() == 0 && warm_fake.requests().is_empty(), || {
        format!("warm pass made {} calls", warm_client.network_calls())
    })?;
    ensure(warm == cold, || "cached vectors differ from fetched ones".into())?;

    // Concurrency cap, as seen from the endpoint side.
    let max_in_flight = 3;
    let slow = FakeEmbeddings::new(false, Duration::from_millis(20));
    let client = EmbeddingClient::new(config(max_in_flight, 2), slow.clone(), None).map_err(|e| e.to_string())?;
    let many: Vec<String> = (0..48).map(|i| format!("item {i}")).collect();
    client.embed_batch(&many).map_err(|e| e.to_string())?;
    let peak = slow.peak.load(Ordering::SeqCst);
    ensure(peak <= max_in_flight && peak >= 2, || format!("endpoint saw {peak} concurrent requests"))?;
    ensure(client.peak_in_flight() <= max_in_flight, || "limiter exceeded its cap".into())?;

    // Partial response: the retry asks for exactly the omitted texts.
    let partial = FakeEmbeddings::new(true, Duration::ZERO);
    let client = EmbeddingClient::new(config(1, 64), partial.clone(), None).map_err(|e| e.to_string())?;
    let batch: Vec<String> = (0..10).map(|i| format!("q {i}")).collect();
    let vectors = client.embed_batch(&batch).map_err(|e| e.to_string())?;
    let reqs = partial.requests();
    let odd: Vec<String> = batch.iter().filter(|t| t.ends_with(['1', '3', '5', '7', '9'])).cloned().collect();
    ensure(reqs.len() == 2 && reqs[0] == batch && reqs[1] == odd, || format!("requests were {reqs:?}"))?;
    ensure(vectors.iter().zip(&batch).all(|(v, t)| *v == fake_vector(t)), || {
        "retried vectors landed in the wrong slots".into()
    })?;
    Ok(format!(
        "warm pass 0 calls; endpoint peak {peak}/{max_in_flight}; retry asked for {} of {}",
        reqs[1].len(),
        batch.len()
    ))
}

