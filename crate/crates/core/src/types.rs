//! Vocabulary, token sequences, and categorical distributions.
//!
//! The mask is not part of the real vocabulary: a vocabulary of size `V`
//! works over token ids `0..V`, and the mask always has id `V`. Distributions
//! over the extended alphabet therefore have `V + 1` entries, with the mask
//! entry last.

use crate::error::Error;
use crate::scalar::Real;
use crate::Result;
use serde::{Deserialize, Serialize};

/// Token id. Ids `0..vocab.size()` are real symbols, `vocab.size()` the mask.
pub type Token = u32;

/// Sum tolerance accepted by [`Distribution::new`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Real-symbol alphabet; the mask id is derived, never stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config(format!(
                "vocab size must be at least 2, got {size}"
            )));
        }
        Ok(Vocab { size })
    }

    /// Number of real symbols.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mask_id(&self) -> Token {
        self.size as Token
    }

    /// Entries in a distribution over real symbols plus the mask.
    pub fn n_entries(&self) -> usize {
        self.size + 1
    }

    pub fn is_real(&self, token: Token) -> bool {
        (token as usize) < self.size
    }

    pub fn is_mask(&self, token: Token) -> bool {
        token == self.mask_id()
    }
}

impl TryFrom<usize> for Vocab {
    type Error = Error;
    fn try_from(size: usize) -> Result<Self> {
        Vocab::new(size)
    }
}

impl From<Vocab> for usize {
    fn from(v: Vocab) -> usize {
        v.size
    }
}

/// A token sequence; may contain masks unless stated otherwise.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Sequence {
    pub tokens: Vec<Token>,
}

impl Sequence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sequence { tokens }
    }

    /// All-mask sequence of the given length.
    pub fn masked(len: usize, vocab: &Vocab) -> Self {
        Sequence {
            tokens: vec![vocab.mask_id(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn masked_positions(&self, vocab: &Vocab) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| vocab.is_mask(self.tokens[i]))
            .collect()
    }

    pub fn count_masked(&self, vocab: &Vocab) -> usize {
        self.tokens.iter().filter(|&&t| vocab.is_mask(t)).count()
    }

    /// True when every token is a real symbol.
    pub fn is_clean(&self, vocab: &Vocab) -> bool {
        self.tokens.iter().all(|&t| vocab.is_real(t))
    }
}

/// Categorical distribution over token ids `0..n`.
///
/// Construction validates nonnegativity and normalization to
/// [`NORMALIZATION_TOL`]; kernels that build distributions from arithmetic
/// are expected to clip only sub-1e-15 negative rounding residue beforehand.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution<F: Real> {
    probs: Vec<F>,
}

impl<F: Real> Distribution<F> {
    pub fn new(probs: Vec<F>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("empty distribution".into()));
        }
        if let Some(p) = probs.iter().find(|p| p.is_nan() || **p < F::zero()) {
            return Err(Error::Range(format!("negative probability entry {p}")));
        }
        let sum: F = probs.iter().copied().sum();
        let err = (sum.as_f64() - 1.0).abs();
        if !err.is_finite() || err > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { sum: sum.as_f64() });
        }
        Ok(Distribution { probs })
    }

    pub fn point_mass(index: usize, n: usize) -> Self {
        assert!(index < n, "point mass index {index} out of {n}");
        let mut probs = vec![F::zero(); n];
        probs[index] = F::one();
        Distribution { probs }
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0);
        Distribution {
            probs: vec![F::one() / F::of(n as f64); n],
        }
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, i: usize) -> F {
        self.probs[i]
    }

    /// Index of the largest entry; ties break to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.probs.len() {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Shannon entropy in nats, with `0 ln 0 = 0`.
    pub fn entropy(&self) -> F {
        let mut h = F::zero();
        for &p in &self.probs {
            if p > F::zero() {
                h = h - p * p.ln();
            }
        }
        h
    }

    /// Temperature-sharpened distribution `p^(1/tau)` renormalized.
    ///
    /// `tau = 1` is the identity, `tau = 0` the argmax point mass with
    /// lowest-index tie-breaking. Exponentiation divides by the max entry
    /// first so small temperatures do not underflow the whole vector.
    pub fn tempered(&self, tau: f64) -> Result<Self> {
        if tau.is_nan() || tau < 0.0 {
            return Err(Error::Range(format!("temperature must be >= 0, got {tau}")));
        }
        if tau == 0.0 {
            return Ok(Self::point_mass(self.argmax(), self.len()));
        }
        if tau == 1.0 {
            return Ok(self.clone());
        }
        let pmax = self.probs[self.argmax()];
        let inv_tau = F::of(1.0 / tau);
        let mut w: Vec<F> = self
            .probs
            .iter()
            .map(|&p| {
                if p > F::zero() {
                    (p / pmax).powf(inv_tau)
                } else {
                    F::zero()
                }
            })
            .collect();
        let total: F = w.iter().copied().sum();
        for x in &mut w {
            *x = *x / total;
        }
        Ok(Distribution { probs: w })
    }
}
