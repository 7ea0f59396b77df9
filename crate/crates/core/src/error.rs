//! Error taxonomy shared across the crate.
//!
//! Variants map one-to-one onto the failure modes the contracts name: range
//! violations on kernel arguments, degenerate reverse steps, unnormalised
//! distributions, impossible evidence under a chain, exhausted enumeration
//! budgets, and malformed inputs.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A probability vector whose entries do not sum to 1 within tolerance.
    #[error("distribution not normalized: sum = {sum}")]
    NotNormalized { sum: f64 },

    /// An argument left its documented domain.
    #[error("out of range: {0}")]
    Range(String),

    /// A reverse step conditioned on a masked token at alpha_t = 1, where the
    /// posterior is undefined.
    #[error("degenerate reverse step: alpha_t = 1 with a masked input")]
    DegenerateStep,

    /// A denoiser distribution with nonzero mass on the mask token.
    #[error("denoiser output puts mass {mass} on the mask token")]
    MaskMass { mass: f64 },

    /// Invalid configuration or incompatible option combination.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed dataset or checkpoint content, with a 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Conditioning evidence has probability zero under the chain.
    #[error("evidence has probability zero under the chain")]
    ImpossibleEvidence,

    /// The oracle error predictor was asked to score without a reference.
    #[error("oracle error predictor needs the ground-truth sequence")]
    MissingGroundTruth,

    /// Exhaustive enumeration would exceed its leaf budget.
    #[error("enumeration budget exceeded: about {leaves:.3e} leaves > {budget:.3e}")]
    Budget { leaves: f64, budget: f64 },

    /// Train/holdout ranges overlap or cannot be checked for disjointness.
    #[error("split error: {0}")]
    Split(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
