//! Hypersphere geometry and the radial dispersion score family.
//!
//! Every generation embedding is projected onto the unit sphere, and the
//! scores measure how far the projected points sit from their (optionally
//! probability-weighted) centroid. All accumulation runs in `f64`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum deviation from unit norm accepted without renormalizing.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Norms below this are treated as zero vectors.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Tolerance on the sum of probability weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispersionError {
    #[error("degenerate embedding (norm below {ZERO_NORM_EPS:e}) at index {index}")]
    DegenerateEmbedding { index: usize },
    #[error("embedding has no dimensions")]
    EmptyVector,
    #[error("embedding {index} is not finite")]
    NonFinite { index: usize },
    #[error("dispersion needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("embedding {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} weights, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("likelihood {index} is not finite")]
    InvalidLikelihood { index: usize },
    #[error("invalid probability weights: {0}")]
    InvalidWeights(String),
}

pub type Result<T> = std::result::Result<T, DispersionError>;

/// Scales `v` to unit ℓ2 norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(DispersionError::EmptyVector);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(DispersionError::NonFinite { index: 0 });
    }
    let norm = l2_norm(v);
    if norm < ZERO_NORM_EPS {
        return Err(DispersionError::DegenerateEmbedding { index: 0 });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// N ≥ 2 unit-norm embeddings of sampled generations for one prompt.
///
/// Stored row-major. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    data: Vec<f64>,
    n: usize,
    dim: usize,
}

impl EmbeddingSet {
    /// Builds a set, renormalizing any vector whose norm is off by more than
    /// [`UNIT_NORM_TOL`] (a warning is logged once per set).
    pub fn new<V: AsRef<[f64]>>(vectors: &[V]) -> Result<Self> {
        let (set, renormalized) = Self::new_counting(vectors)?;
        if renormalized > 0 {
            log::warn!(
                "renormalized {renormalized} of {} embeddings that were not unit-norm",
                set.n
            );
        }
        Ok(set)
    }

    /// Like [`EmbeddingSet::new`] but silent; also returns how many vectors
    /// had to be renormalized.
    pub fn new_counting<V: AsRef<[f64]>>(vectors: &[V]) -> Result<(Self, usize)> {
        let n = vectors.len();
        if n < 2 {
            return Err(DispersionError::TooFewSamples(n));
        }
        let dim = vectors[0].as_ref().len();
        if dim == 0 {
            return Err(DispersionError::EmptyVector);
        }
        let mut data = Vec::with_capacity(n * dim);
        let mut renormalized = 0;
        for (index, v) in vectors.iter().enumerate() {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(DispersionError::DimensionMismatch {
                    index,
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(DispersionError::NonFinite { index });
            }
            let norm = l2_norm(v);
            if norm < ZERO_NORM_EPS {
                return Err(DispersionError::DegenerateEmbedding { index });
            }
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                renormalized += 1;
                data.extend(v.iter().map(|x| x / norm));
            } else {
                data.extend_from_slice(v);
            }
        }
        Ok((Self { data, n, dim }, renormalized))
    }

    /// Builds a set from 32-bit embeddings, widening before any arithmetic.
    pub fn from_f32<V: AsRef<[f32]>>(vectors: &[V]) -> Result<Self> {
        let wide: Vec<Vec<f64>> = vectors
            .iter()
            .map(|v| v.as_ref().iter().map(|&x| f64::from(x)).collect())
            .collect();
        Self::new(&wide)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    /// Always false; a set holds at least two vectors.
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vectors(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Arithmetic mean of the embeddings.
    ///
    /// Uses a running mean so a set of identical vectors reproduces that
    /// vector bit-for-bit.
    pub fn centroid(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for (k, u) in self.vectors().enumerate() {
            let count = (k + 1) as f64;
            for (m, x) in mean.iter_mut().zip(u) {
                *m += (x - *m) / count;
            }
        }
        mean
    }

    /// Σ p_i u_i.
    pub fn weighted_centroid(&self, p: &ProbabilityWeights) -> Result<Vec<f64>> {
        self.check_weights(p)?;
        let mut center = vec![0.0; self.dim];
        for (u, &w) in self.vectors().zip(p.as_slice()) {
            for (c, x) in center.iter_mut().zip(u) {
                *c += w * x;
            }
        }
        Ok(center)
    }

    /// Σ ‖u_i − ū‖₁.
    pub fn rds(&self) -> f64 {
        self.rds_per_sample().iter().sum()
    }

    /// Σ ‖u_i − ū‖₂.
    pub fn rds_l2(&self) -> f64 {
        let center = self.centroid();
        self.vectors().map(|u| l2_distance(u, &center)).sum()
    }

    /// ‖u_i − ū‖₁ for each sample.
    pub fn rds_per_sample(&self) -> Vec<f64> {
        let center = self.centroid();
        self.vectors().map(|u| l1_distance(u, &center)).collect()
    }

    /// ‖u_i − ū_w‖₁ for each sample.
    pub fn rds_w_per_sample(&self, p: &ProbabilityWeights) -> Result<Vec<f64>> {
        let center = self.weighted_centroid(p)?;
        Ok(self.vectors().map(|u| l1_distance(u, &center)).collect())
    }

    /// Σ p_i ‖u_i − ū_w‖₁, the 1-Wasserstein distance (ℓ1 ground cost)
    /// between Σ p_i δ_{u_i} and the Dirac mass at its barycenter ū_w.
    pub fn rds_weighted(&self, p: &ProbabilityWeights) -> Result<f64> {
        let per_sample = self.rds_w_per_sample(p)?;
        Ok(per_sample
            .iter()
            .zip(p.as_slice())
            .map(|(d, w)| w * d)
            .sum())
    }

    /// Mean squared ℓ2 distance to the centroid, clamped to [0, 1].
    pub fn eigen_embed(&self) -> f64 {
        let center = self.centroid();
        let total: f64 = self
            .vectors()
            .map(|u| {
                let d = l2_distance(u, &center);
                d * d
            })
            .sum();
        (total / self.n as f64).clamp(0.0, 1.0)
    }

    /// 1 − ‖ū‖₂², the closed form of [`EmbeddingSet::eigen_embed`] for unit vectors.
    pub fn eigen_embed_from_centroid(&self) -> f64 {
        let center = self.centroid();
        1.0 - dot(&center, &center)
    }

    /// Mean of u_iᵀu_j over ordered pairs i ≠ j, by direct pairwise summation.
    pub fn avg_pairwise_cosine(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            let ui = self.vector(i);
            for j in (i + 1)..self.n {
                total += 2.0 * dot(ui, self.vector(j));
            }
        }
        total / (self.n * (self.n - 1)) as f64
    }

    /// All prompt-level and per-sample scores. The weighted fields are only
    /// filled when `p` is given.
    pub fn scores(&self, p: Option<&ProbabilityWeights>) -> Result<ScoreSet> {
        let per_sample = self.rds_per_sample();
        let (rds_w, per_sample_w) = match p {
            Some(p) => {
                let per_w = self.rds_w_per_sample(p)?;
                let total = per_w.iter().zip(p.as_slice()).map(|(d, w)| w * d).sum();
                (Some(total), Some(per_w))
            }
            None => (None, None),
        };
        Ok(ScoreSet {
            rds: per_sample.iter().sum(),
            rds_l2: self.rds_l2(),
            rds_w,
            eigen_embed: self.eigen_embed(),
            per_sample,
            per_sample_w,
        })
    }

    fn check_weights(&self, p: &ProbabilityWeights) -> Result<()> {
        if p.len() != self.n {
            return Err(DispersionError::LengthMismatch {
                expected: self.n,
                found: p.len(),
            });
        }
        Ok(())
    }
}

/// Normalized generation likelihoods p_i (non-negative, summing to 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityWeights(Vec<f64>);

impl ProbabilityWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(DispersionError::InvalidWeights("no weights".into()));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(DispersionError::InvalidWeights(format!(
                "weight {i} is negative or not finite"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(DispersionError::InvalidWeights(format!(
                "weights sum to {sum}, not 1"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Maps average negative log-likelihoods to weights p_i ∝ exp(−anll_i).
///
/// The minimum ANLL is subtracted before exponentiating, so the result is
/// unchanged by adding a constant to every input.
pub fn probs_from_anll(anlls: &[f64]) -> Result<ProbabilityWeights> {
    if anlls.is_empty() {
        return Err(DispersionError::InvalidWeights("no likelihoods".into()));
    }
    if let Some(index) = anlls.iter().position(|a| !a.is_finite()) {
        return Err(DispersionError::InvalidLikelihood { index });
    }
    let shift = anlls.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = anlls.iter().map(|a| (-(a - shift)).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(ProbabilityWeights(raw.into_iter().map(|r| r / total).collect()))
}

/// Prompt-level and per-sample dispersion scores for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub rds: f64,
    pub rds_l2: f64,
    pub rds_w: Option<f64>,
    pub eigen_embed: f64,
    pub per_sample: Vec<f64>,
    pub per_sample_w: Option<Vec<f64>>,
}
