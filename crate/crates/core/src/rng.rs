//! Deterministic, stream-addressed randomness.
//!
//! Every random decision in the crate flows through an [`RngStream`] opened
//! as `(base_seed, stream_index)`. Work items address streams by index
//! (sample `i` uses stream `i` within its purpose), so results are identical
//! regardless of worker count or scheduling order. Categorical draws use
//! inverse-CDF scanning in fixed index order, which pins byte-level outputs.

use crate::error::Error;
use crate::scalar::Real;
use crate::types::Distribution;
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Namespaces for stream indices, so e.g. data generation and sampling with
/// the same base seed never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamPurpose {
    Sample = 0,
    DenoiserFit = 1,
    PredictorRows = 2,
    Truth = 3,
    Data = 4,
    Check = 5,
}

/// Bits reserved for the within-purpose index.
const PURPOSE_SHIFT: u32 = 48;

/// Stream index for item `index` under `purpose`.
pub fn stream_id(purpose: StreamPurpose, index: u64) -> u64 {
    assert!(
        index < (1 << PURPOSE_SHIFT),
        "stream index {index} exceeds the purpose partition"
    );
    ((purpose as u64) << PURPOSE_SHIFT) | index
}

/// A counter-based generator pinned to one `(seed, stream)` pair.
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn seeded(base_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        rng.set_stream(stream_index);
        RngStream { rng }
    }

    pub fn for_purpose(base_seed: u64, purpose: StreamPurpose, index: u64) -> Self {
        Self::seeded(base_seed, stream_id(purpose, index))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn uniform_index(&mut self, n: usize) -> usize {
        assert!(n > 0);
        let i = (self.uniform() * n as f64) as usize;
        i.min(n - 1)
    }

    /// Standard Gumbel draw via inverse CDF, clamped away from `ln 0`.
    pub fn gumbel(&mut self) -> f64 {
        let u = self.uniform().max(1e-300);
        -(-u.ln()).ln()
    }
}

fn index_from_uniform<F: Real>(probs: &[F], u: F) -> usize {
    let mut acc = F::zero();
    for (i, &p) in probs.iter().enumerate() {
        acc = acc + p;
        if u < acc {
            return i;
        }
    }
    // Rounding left the CDF marginally short of the draw; take the last
    // positive-mass index.
    probs
        .iter()
        .rposition(|&p| p > F::zero())
        .expect("distribution has positive mass")
}

/// Inverse-CDF draw from raw probabilities, validating normalization first.
pub fn sample_categorical<F: Real>(probs: &[F], rng: &mut RngStream) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::Config("empty distribution".into()));
    }
    if let Some(p) = probs.iter().find(|p| p.is_nan() || **p < F::zero()) {
        return Err(Error::Range(format!("negative probability entry {p}")));
    }
    let sum: F = probs.iter().copied().sum();
    let err = (sum.as_f64() - 1.0).abs();
    if !err.is_finite() || err > crate::types::NORMALIZATION_TOL {
        return Err(Error::NotNormalized { sum: sum.as_f64() });
    }
    Ok(index_from_uniform(probs, F::of(rng.uniform())))
}

impl<F: Real> Distribution<F> {
    /// One draw; a constructed distribution is always valid, so this cannot
    /// fail.
    pub fn sample(&self, rng: &mut RngStream) -> usize {
        index_from_uniform(self.probs(), F::of(rng.uniform()))
    }
}
