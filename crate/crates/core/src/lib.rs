//! Radial dispersion uncertainty scores for sampled LLM generations.
//!
//! Embeddings of N sampled answers to one prompt are placed on the unit
//! sphere; their spread around the centroid ([`dispersion`]) measures how
//! uncertain the model is. [`baselines`] holds the likelihood and
//! self-consistency scores compared against, [`evaluation`] the AUROC and
//! best-of-N protocol, and [`regime_sim`] a generator of synthetic sets.

pub mod baselines;
pub mod dispersion;
pub mod evaluation;
pub mod exec;
pub mod regime_sim;

pub use baselines::{ExtractedAnswer, ExtractionMode, TokenLogprobs};
pub use dispersion::{probs_from_anll, DispersionError, EmbeddingSet, ProbabilityWeights, ScoreSet};
pub use evaluation::{CorrectnessMode, EvalReport, LabeledScore, PromptRow};
pub use exec::Execution;
pub use regime_sim::{Regime, RegimeConfig};
