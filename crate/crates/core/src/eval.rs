//! Sample-quality metrics scored against the known generating chain.
//!
//! The evaluator-model metrics of large-scale text benchmarks reduce here
//! to their exact desk-scale counterparts: generative perplexity under the
//! true chain, n-gram diversity, candidate stability across steps, and
//! infill accuracy on held positions. All functions are pure; recomputing a
//! metric from its stored inputs reproduces the stored value bit-for-bit.

use crate::error::Error;
use crate::samplers::Trajectory;
use crate::types::{Sequence, Token};
use crate::{Chain, Result};
use std::collections::{BTreeMap, BTreeSet};

/// Exponentiated per-token negative log-likelihood under the chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PplReport {
    pub ppl: f64,
    /// Samples with probability zero under the chain. Any of these makes
    /// the perplexity infinite.
    pub impossible: usize,
}

pub fn oracle_gen_ppl(chain: &Chain, samples: &[Sequence]) -> Result<PplReport> {
    if samples.is_empty() {
        return Err(Error::Config("perplexity of an empty sample set".into()));
    }
    let mut total_lp = 0.0;
    let mut total_len = 0usize;
    let mut impossible = 0usize;
    for s in samples {
        let lp = chain.logprob(s);
        if lp.is_infinite() {
            impossible += 1;
        } else {
            total_lp += lp;
        }
        total_len += s.len();
    }
    let ppl = if impossible > 0 {
        f64::INFINITY
    } else {
        (-total_lp / total_len as f64).exp()
    };
    Ok(PplReport { ppl, impossible })
}

/// Product over n = 2..4 of the unique-to-total n-gram ratio.
pub fn diversity(seq: &Sequence) -> Result<f64> {
    if seq.len() < 4 {
        return Err(Error::Config(format!(
            "diversity needs length >= 4, got {}",
            seq.len()
        )));
    }
    let mut product = 1.0;
    for n in 2..=4usize {
        let total = seq.len() - n + 1;
        let unique: BTreeSet<&[Token]> = seq.tokens.windows(n).collect();
        product *= unique.len() as f64 / total as f64;
    }
    Ok(product)
}

pub fn mean_diversity(samples: &[Sequence]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("diversity of an empty sample set".into()));
    }
    let mut acc = 0.0;
    for s in samples {
        acc += diversity(s)?;
    }
    Ok(acc / samples.len() as f64)
}

/// Fraction of matching positions between each adjacent pair of committed
/// candidates. Empty when fewer than two candidates were recorded.
pub fn step_similarity(traj: &Trajectory) -> Vec<f64> {
    traj.candidates
        .windows(2)
        .map(|w| {
            let same = w[0]
                .tokens
                .iter()
                .zip(&w[1].tokens)
                .filter(|(a, b)| a == b)
                .count();
            same as f64 / w[0].len() as f64
        })
        .collect()
}

/// Per-step mean similarity across trajectories of equal step count.
pub fn step_similarity_curve(trajs: &[Trajectory]) -> Result<Vec<f64>> {
    let steps = match trajs.first() {
        None => return Err(Error::Config("similarity curve of no trajectories".into())),
        Some(t) => t.steps(),
    };
    if trajs.iter().any(|t| t.steps() != steps) {
        return Err(Error::Config(
            "similarity curve needs equal-length trajectories".into(),
        ));
    }
    if steps < 2 {
        return Ok(Vec::new());
    }
    let mut acc = vec![0.0; steps - 1];
    for t in trajs {
        for (i, s) in step_similarity(t).into_iter().enumerate() {
            acc[i] += s;
        }
    }
    for a in &mut acc {
        *a /= trajs.len() as f64;
    }
    Ok(acc)
}

/// Fraction of the held positions where `generated` matches `truth`; an
/// empty set is vacuously 1.
pub fn infill_accuracy(
    truth: &Sequence,
    generated: &Sequence,
    masked_positions: &BTreeSet<usize>,
) -> Result<f64> {
    if truth.len() != generated.len() {
        return Err(Error::Config(format!(
            "length mismatch: truth {} vs generated {}",
            truth.len(),
            generated.len()
        )));
    }
    if let Some(&p) = masked_positions.iter().next_back() {
        if p >= truth.len() {
            return Err(Error::Range(format!(
                "held position {p} outside length {}",
                truth.len()
            )));
        }
    }
    if masked_positions.is_empty() {
        return Ok(1.0);
    }
    let hits = masked_positions
        .iter()
        .filter(|&&p| truth.tokens[p] == generated.tokens[p])
        .count();
    Ok(hits as f64 / masked_positions.len() as f64)
}

/// Count distinct sequences, for quick mode-collapse summaries.
pub fn support_counts(samples: &[Sequence]) -> BTreeMap<Sequence, usize> {
    let mut counts = BTreeMap::new();
    for s in samples {
        *counts.entry(s.clone()).or_insert(0) += 1;
    }
    counts
}
