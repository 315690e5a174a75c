//! Synthetic unit-vector sets for the three dispersion regimes: a coherent
//! cluster, a hemispheric spread, and opposing clusters whose centroid
//! cancels.
//!
//! Randomness comes from `ChaCha8Rng::seed_from_u64(seed)` with Gaussian
//! draws from `rand_distr::StandardNormal`, so a seed reproduces the same
//! set on every platform.

use std::f64::consts::FRAC_PI_2;
use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispersion::{l2_norm, DispersionError, EmbeddingSet, ZERO_NORM_EPS};
use crate::exec::Execution;

/// Smallest polar angle (from the hemisphere axis) of a hemispheric sample.
pub const HEMISPHERE_MIN_POLAR: f64 = FRAC_PI_4;

/// Header of the sweep CSV.
pub const SWEEP_HEADER: [&str; 10] = [
    "regime",
    "n",
    "dim",
    "noise",
    "clusters",
    "seed",
    "rds",
    "rds_l2",
    "eigen_embed",
    "avg_cosine",
];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid regime config: {0}")]
    Config(String),
    #[error(transparent)]
    Dispersion(#[from] DispersionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Coherent,
    Hemispheric,
    Opposing,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Coherent, Regime::Hemispheric, Regime::Opposing];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Coherent => "coherent",
            Regime::Hemispheric => "hemispheric",
            Regime::Opposing => "opposing",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coherent" => Ok(Regime::Coherent),
            "hemispheric" => Ok(Regime::Hemispheric),
            "opposing" => Ok(Regime::Opposing),
            other => Err(SimError::Config(format!("unknown regime `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub regime: Regime,
    pub n: usize,
    pub dim: usize,
    /// Scale of the Gaussian jitter added before renormalizing.
    pub noise: f64,
    /// Number of opposing clusters; ignored by the other regimes.
    pub clusters: usize,
    pub seed: u64,
}

impl RegimeConfig {
    pub fn new(regime: Regime, n: usize, dim: usize, seed: u64) -> Self {
        Self {
            regime,
            n,
            dim,
            noise: 0.0,
            clusters: 2,
            seed,
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_clusters(mut self, clusters: usize) -> Self {
        self.clusters = clusters;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::Config(msg));
        if self.n < 2 {
            return fail(format!("n must be at least 2, got {}", self.n));
        }
        if self.dim == 0 {
            return fail("dim must be at least 1".into());
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return fail(format!("noise must be finite and non-negative, got {}", self.noise));
        }
        match self.regime {
            Regime::Hemispheric if self.dim < 2 => {
                fail("hemispheric regime needs dim >= 2".into())
            }
            Regime::Opposing if self.clusters < 2 || self.clusters > self.dim + 1 => fail(format!(
                "opposing regime needs 2 <= clusters <= dim + 1, got clusters={} dim={}",
                self.clusters, self.dim
            )),
            _ => Ok(()),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let norm = l2_norm(v);
    (norm >= ZERO_NORM_EPS).then(|| v.iter().map(|x| x / norm).collect())
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        if let Some(u) = normalized(&gaussian(rng, dim)) {
            return u;
        }
    }
}

/// Unit vector orthogonal to `axis` (which must be unit-norm, dim ≥ 2).
fn random_orthogonal(rng: &mut ChaCha8Rng, axis: &[f64]) -> Vec<f64> {
    loop {
        let g = gaussian(rng, axis.len());
        let along: f64 = g.iter().zip(axis).map(|(a, b)| a * b).sum();
        let perp: Vec<f64> = g.iter().zip(axis).map(|(x, a)| x - along * a).collect();
        if let Some(w) = normalized(&perp) {
            return w;
        }
    }
}

/// `center + noise·g`, renormalized; redraws in the measure-zero case of
/// cancelling to the origin.
fn jitter(rng: &mut ChaCha8Rng, center: &[f64], noise: f64) -> Vec<f64> {
    loop {
        let g = gaussian(rng, center.len());
        let v: Vec<f64> = center.iter().zip(&g).map(|(c, x)| c + noise * x).collect();
        if let Some(u) = normalized(&v) {
            return u;
        }
    }
}

/// Vertices of a regular simplex with `k` vertices, centered on the origin,
/// in the first `k - 1` coordinates of `dim`-space. For k = 2 this is ±e₁.
pub fn simplex_vertices(k: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|j| {
            // Coordinates in the Helmert basis of the sum-zero hyperplane of ℝᵏ.
            let mut v = vec![0.0; dim];
            for m in 1..k {
                let scale = ((m * (m + 1)) as f64).sqrt();
                v[m - 1] = match j.cmp(&m) {
                    std::cmp::Ordering::Less => 1.0 / scale,
                    std::cmp::Ordering::Equal => -(m as f64) / scale,
                    std::cmp::Ordering::Greater => 0.0,
                };
            }
            normalized(&v).expect("simplex vertex is non-zero")
        })
        .collect()
}

/// Draws one embedding set for `cfg`.
///
/// * coherent: a random base direction plus jitter;
/// * hemispheric: polar angle from a random axis uniform in [π/4, π/2),
///   with the perpendicular direction shared antithetically by consecutive
///   pairs so the spread balances around the axis;
/// * opposing: samples assigned round-robin to the vertices of a centered
///   regular simplex (±e₁ for two clusters), plus jitter. The centroid
///   cancels exactly when `clusters` divides `n` and `noise` is zero.
pub fn generate(cfg: &RegimeConfig) -> Result<EmbeddingSet, SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vectors: Vec<Vec<f64>> = match cfg.regime {
        Regime::Coherent => {
            let base = random_unit(&mut rng, cfg.dim);
            (0..cfg.n)
                .map(|_| jitter(&mut rng, &base, cfg.noise))
                .collect()
        }
        Regime::Hemispheric => {
            let axis = random_unit(&mut rng, cfg.dim);
            let mut out = Vec::with_capacity(cfg.n);
            let mut side = Vec::new();
            for i in 0..cfg.n {
                if i % 2 == 0 {
                    side = random_orthogonal(&mut rng, &axis);
                }
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                let polar = rng.random_range(HEMISPHERE_MIN_POLAR..FRAC_PI_2);
                let (sin, cos) = polar.sin_cos();
                let point: Vec<f64> = axis
                    .iter()
                    .zip(&side)
                    .map(|(a, w)| cos * a + sign * sin * w)
                    .collect();
                out.push(jitter(&mut rng, &point, cfg.noise));
            }
            out
        }
        Regime::Opposing => {
            let centers = simplex_vertices(cfg.clusters, cfg.dim);
            (0..cfg.n)
                .map(|i| jitter(&mut rng, &centers[i % cfg.clusters], cfg.noise))
                .collect()
        }
    };
    Ok(EmbeddingSet::new(&vectors)?)
}

/// One row of a regime sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub config: RegimeConfig,
    pub rds: f64,
    pub rds_l2: f64,
    /// Always `None`: simulated sets carry no likelihoods.
    pub rds_w: Option<f64>,
    pub eigen_embed: f64,
    pub avg_cosine: f64,
}

impl SweepRow {
    fn record(&self) -> [String; 10] {
        let c = &self.config;
        [
            c.regime.to_string(),
            c.n.to_string(),
            c.dim.to_string(),
            c.noise.to_string(),
            c.clusters.to_string(),
            c.seed.to_string(),
            self.rds.to_string(),
            self.rds_l2.to_string(),
            self.eigen_embed.to_string(),
            self.avg_cosine.to_string(),
        ]
    }
}

pub fn sweep_row(cfg: &RegimeConfig) -> Result<SweepRow, SimError> {
    let set = generate(cfg)?;
    Ok(SweepRow {
        config: *cfg,
        rds: set.rds(),
        rds_l2: set.rds_l2(),
        rds_w: None,
        eigen_embed: set.eigen_embed(),
        avg_cosine: set.avg_pairwise_cosine(),
    })
}

/// Generates and scores every config; rows come back in input order.
pub fn sweep(configs: &[RegimeConfig], exec: Execution) -> Vec<Result<SweepRow, SimError>> {
    exec.map(configs, sweep_row)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(SWEEP_HEADER)?;
    for row in rows {
        out.write_record(row.record())?;
    }
    out.flush()?;
    Ok(())
}
