//! Denoisers: from a partially masked sequence to per-position distributions
//! over the clean token.
//!
//! Outputs obey two hard contracts the kernels rely on. Every distribution
//! puts exactly zero mass on the mask token, and every unmasked position
//! comes back as an exact point mass on the shown token (carry-over). The
//! [`MarkovOracleDenoiser`] computes the true posterior of the data chain by
//! forward-backward message passing; the [`TabularDenoiser`] is a learned
//! stand-in that conditions on the immediate left/right context only, so it
//! makes honest, reproducible mistakes for the error predictor to find.

use crate::corpus::MarkovChain;
use crate::error::Error;
use crate::noise::{corrupt, NoiseSchedule};
use crate::rng::RngStream;
use crate::types::{Sequence, Token, Vocab};
use crate::{Dist, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// Per-position clean-token distributions for one input sequence.
#[derive(Clone, Debug)]
pub struct DenoiserOutput {
    pub per_position: Vec<Dist>,
}

impl DenoiserOutput {
    /// Check the output contract against the input it was produced for.
    pub fn validate(&self, x_t: &Sequence, vocab: &Vocab) -> Result<()> {
        if self.per_position.len() != x_t.len() {
            return Err(Error::Config(format!(
                "denoiser returned {} positions for a length-{} input",
                self.per_position.len(),
                x_t.len()
            )));
        }
        for (i, d) in self.per_position.iter().enumerate() {
            if d.len() != vocab.n_entries() {
                return Err(Error::Config(format!(
                    "position {i}: {} entries, vocab needs {}",
                    d.len(),
                    vocab.n_entries()
                )));
            }
            let m = d.get(vocab.mask_id() as usize);
            if m != 0.0 {
                return Err(Error::MaskMass { mass: m });
            }
            let tok = x_t.tokens[i];
            if vocab.is_real(tok) && d.get(tok as usize) != 1.0 {
                return Err(Error::Config(format!(
                    "position {i}: unmasked token {tok} not carried over as a point mass"
                )));
            }
        }
        Ok(())
    }
}

/// A clean-token predictor. `t` is the source noise level of `x_t`; models
/// that do not condition on time ignore it.
pub trait Denoiser: Send + Sync {
    fn vocab(&self) -> Vocab;
    fn denoise(&self, x_t: &Sequence, t: f64) -> Result<DenoiserOutput>;
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exact posterior denoiser for Markov-chain corpora.
///
/// Treats unmasked tokens as evidence of the clean sequence and runs
/// forward-backward in log space with per-position renormalization, so long
/// sequences and near-deterministic chains stay finite.
pub struct MarkovOracleDenoiser {
    chain: MarkovChain<f64>,
    log_pi: Vec<f64>,
    log_a: Vec<Vec<f64>>,
}

impl MarkovOracleDenoiser {
    pub fn new(chain: MarkovChain<f64>) -> Self {
        let ln = |p: f64| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY };
        let n = chain.size();
        let log_pi = chain.pi().iter().map(|&p| ln(p)).collect();
        let log_a = (0..n)
            .map(|v| chain.row(v).iter().map(|&p| ln(p)).collect())
            .collect();
        MarkovOracleDenoiser {
            chain,
            log_pi,
            log_a,
        }
    }

    pub fn chain(&self) -> &MarkovChain<f64> {
        &self.chain
    }

    pub fn checkpoint(&self) -> DenoiserCheckpoint {
        DenoiserCheckpoint::MarkovOracle {
            chain: self.chain.clone(),
        }
    }
}

impl Denoiser for MarkovOracleDenoiser {
    fn vocab(&self) -> Vocab {
        self.chain.vocab()
    }

    fn denoise(&self, x_t: &Sequence, _t: f64) -> Result<DenoiserOutput> {
        let vocab = self.vocab();
        let n = self.chain.size();
        let len = x_t.len();
        if len == 0 {
            return Ok(DenoiserOutput {
                per_position: Vec::new(),
            });
        }
        // Evidence log-potentials: masked positions are uninformative.
        let evidence = |i: usize, v: usize| -> f64 {
            let tok = x_t.tokens[i];
            if vocab.is_mask(tok) {
                0.0
            } else {
                assert!(vocab.is_real(tok), "token {tok} outside the alphabet");
                if v == tok as usize {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        };

        let mut fwd = vec![vec![0.0f64; n]; len];
        for (v, x) in fwd[0].iter_mut().enumerate() {
            *x = self.log_pi[v] + evidence(0, v);
        }
        let z = logsumexp(&fwd[0]);
        if z == f64::NEG_INFINITY {
            return Err(Error::ImpossibleEvidence);
        }
        fwd[0].iter_mut().for_each(|x| *x -= z);
        for i in 1..len {
            let mut scratch = vec![0.0f64; n];
            for v in 0..n {
                for (u, s) in scratch.iter_mut().enumerate() {
                    *s = fwd[i - 1][u] + self.log_a[u][v];
                }
                fwd[i][v] = logsumexp(&scratch) + evidence(i, v);
            }
            let z = logsumexp(&fwd[i]);
            if z == f64::NEG_INFINITY {
                return Err(Error::ImpossibleEvidence);
            }
            fwd[i].iter_mut().for_each(|x| *x -= z);
        }

        let mut bwd = vec![vec![0.0f64; n]; len];
        for i in (0..len - 1).rev() {
            let mut scratch = vec![0.0f64; n];
            for v in 0..n {
                for (u, s) in scratch.iter_mut().enumerate() {
                    *s = self.log_a[v][u] + evidence(i + 1, u) + bwd[i + 1][u];
                }
                bwd[i][v] = logsumexp(&scratch);
            }
            let z = logsumexp(&bwd[i]);
            if z == f64::NEG_INFINITY {
                return Err(Error::ImpossibleEvidence);
            }
            bwd[i].iter_mut().for_each(|x| *x -= z);
        }

        let mut per_position = Vec::with_capacity(len);
        for i in 0..len {
            let tok = x_t.tokens[i];
            if vocab.is_real(tok) {
                per_position.push(Dist::point_mass(tok as usize, vocab.n_entries()));
                continue;
            }
            let mut probs = vec![0.0f64; vocab.n_entries()];
            let mut total = 0.0;
            for v in 0..n {
                let p = (fwd[i][v] + bwd[i][v]).exp();
                probs[v] = p;
                total += p;
            }
            if total <= 0.0 {
                return Err(Error::ImpossibleEvidence);
            }
            probs.iter_mut().for_each(|p| *p /= total);
            per_position.push(Dist::new(probs)?);
        }
        Ok(DenoiserOutput { per_position })
    }
}

/// Context code alphabet for the tabular model: real tokens, mask, boundary.
fn ctx_code(tok: Option<Token>, vocab: &Vocab) -> usize {
    match tok {
        None => vocab.size() + 1,
        Some(t) if vocab.is_mask(t) => vocab.size(),
        Some(t) => {
            assert!(vocab.is_real(t), "token {t} outside the alphabet");
            t as usize
        }
    }
}

/// Count-based denoiser over `(left, right)` neighbour contexts.
///
/// `counts[ctx][v]` accumulates how often clean token `v` sat between the
/// given (possibly masked or boundary) neighbours in corrupted training
/// pairs. Prediction smooths with `lambda`; a never-seen context with
/// `lambda = 0` falls back to uniform.
pub struct TabularDenoiser {
    vocab: Vocab,
    lambda: f64,
    counts: Vec<Vec<f64>>,
}

impl TabularDenoiser {
    fn n_contexts(vocab: &Vocab) -> usize {
        (vocab.size() + 2) * (vocab.size() + 2)
    }

    pub fn from_counts(vocab: Vocab, lambda: f64, counts: Vec<Vec<f64>>) -> Result<Self> {
        if lambda.is_nan() || lambda < 0.0 {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        if counts.len() != Self::n_contexts(&vocab)
            || counts.iter().any(|row| row.len() != vocab.size())
        {
            return Err(Error::Config(format!(
                "count table must be {} x {}",
                Self::n_contexts(&vocab),
                vocab.size()
            )));
        }
        if counts.iter().flatten().any(|&c| c.is_nan() || c < 0.0) {
            return Err(Error::Config("negative count".into()));
        }
        Ok(TabularDenoiser {
            vocab,
            lambda,
            counts,
        })
    }

    /// Fit by corrupting each training sequence `passes` times at a fresh
    /// noise level `t ~ U(0, 1)` and counting clean tokens under masked
    /// positions, keyed by corrupted neighbour context. Single-threaded and
    /// draw-ordered, so a `(seed, stream)` pair pins the table exactly.
    pub fn fit(
        data: &[Sequence],
        vocab: Vocab,
        schedule: &NoiseSchedule,
        lambda: f64,
        passes: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if passes == 0 {
            return Err(Error::Config("need at least one fitting pass".into()));
        }
        let mut counts = vec![vec![0.0f64; vocab.size()]; Self::n_contexts(&vocab)];
        let no_clamps = BTreeSet::new();
        for _ in 0..passes {
            for x0 in data {
                assert!(x0.is_clean(&vocab), "training data must be clean");
                let t = rng.uniform();
                let alpha = schedule.alpha(t).expect("t is in [0, 1)");
                let x_t = corrupt(x0, alpha, &vocab, &no_clamps, rng);
                for i in 0..x_t.len() {
                    if vocab.is_mask(x_t.tokens[i]) {
                        let ctx = Self::ctx_of(&x_t, i, &vocab);
                        counts[ctx][x0.tokens[i] as usize] += 1.0;
                    }
                }
            }
        }
        TabularDenoiser::from_counts(vocab, lambda, counts)
    }

    fn ctx_of(x: &Sequence, i: usize, vocab: &Vocab) -> usize {
        let left = if i == 0 { None } else { Some(x.tokens[i - 1]) };
        let right = x.tokens.get(i + 1).copied();
        ctx_code(left, vocab) * (vocab.size() + 2) + ctx_code(right, vocab)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn counts(&self) -> &[Vec<f64>] {
        &self.counts
    }

    pub fn checkpoint(&self) -> DenoiserCheckpoint {
        DenoiserCheckpoint::Tabular {
            vocab: self.vocab.size(),
            lambda: self.lambda,
            counts: self.counts.clone(),
            split: None,
        }
    }
}

impl Denoiser for TabularDenoiser {
    fn vocab(&self) -> Vocab {
        self.vocab
    }

    fn denoise(&self, x_t: &Sequence, _t: f64) -> Result<DenoiserOutput> {
        let vocab = self.vocab;
        let mut per_position = Vec::with_capacity(x_t.len());
        for i in 0..x_t.len() {
            let tok = x_t.tokens[i];
            if vocab.is_real(tok) {
                per_position.push(Dist::point_mass(tok as usize, vocab.n_entries()));
                continue;
            }
            assert!(vocab.is_mask(tok), "token {tok} outside the alphabet");
            let row = &self.counts[Self::ctx_of(x_t, i, &vocab)];
            let total: f64 = row.iter().sum();
            let denom = total + self.lambda * vocab.size() as f64;
            let mut probs = vec![0.0f64; vocab.n_entries()];
            if denom > 0.0 {
                for v in 0..vocab.size() {
                    probs[v] = (row[v] + self.lambda) / denom;
                }
            } else {
                // Unseen context, no smoothing: fall back to uniform.
                let u = 1.0 / vocab.size() as f64;
                probs[..vocab.size()].fill(u);
            }
            per_position.push(Dist::new(probs)?);
        }
        Ok(DenoiserOutput { per_position })
    }
}

/// Provenance of a tabular fit, for enforcing train/holdout disjointness.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitInfo {
    pub data_digest: String,
    /// Half-open row range of the dataset the table was fitted on.
    pub train_start: usize,
    pub train_end: usize,
}

/// On-disk denoiser, discriminated by `"kind"`.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DenoiserCheckpoint {
    MarkovOracle {
        chain: MarkovChain<f64>,
    },
    Tabular {
        vocab: usize,
        lambda: f64,
        counts: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split: Option<SplitInfo>,
    },
}

impl DenoiserCheckpoint {
    pub fn split(&self) -> Option<&SplitInfo> {
        match self {
            DenoiserCheckpoint::Tabular { split, .. } => split.as_ref(),
            DenoiserCheckpoint::MarkovOracle { .. } => None,
        }
    }

    pub fn with_split(self, info: SplitInfo) -> Self {
        match self {
            DenoiserCheckpoint::Tabular {
                vocab,
                lambda,
                counts,
                ..
            } => DenoiserCheckpoint::Tabular {
                vocab,
                lambda,
                counts,
                split: Some(info),
            },
            other => other,
        }
    }

    /// Validate and build the runtime denoiser.
    pub fn instantiate(&self) -> Result<Box<dyn Denoiser>> {
        match self {
            DenoiserCheckpoint::MarkovOracle { chain } => {
                Ok(Box::new(MarkovOracleDenoiser::new(chain.clone())))
            }
            DenoiserCheckpoint::Tabular {
                vocab,
                lambda,
                counts,
                ..
            } => {
                let vocab = Vocab::new(*vocab)?;
                Ok(Box::new(TabularDenoiser::from_counts(
                    vocab,
                    *lambda,
                    counts.clone(),
                )?))
            }
        }
    }
}

pub fn write_denoiser<P: AsRef<Path>>(path: P, ckpt: &DenoiserCheckpoint) -> Result<()> {
    let json = serde_json::to_string_pretty(ckpt)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_denoiser<P: AsRef<Path>>(path: P) -> Result<DenoiserCheckpoint> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: DenoiserCheckpoint = serde_json::from_str(&text)?;
    // Instantiation validates shapes; do it once here so load errors surface
    // at read time.
    ckpt.instantiate()?;
    Ok(ckpt)
}

/// Commit a clean candidate sequence from a denoiser output: carry over
/// unmasked tokens and draw each masked position from its predicted
/// distribution sharpened to `tau`. `tau = 0` is the argmax (lowest index on
/// ties) and consumes no randomness.
pub fn sample_candidate(
    out: &DenoiserOutput,
    x_t: &Sequence,
    vocab: &Vocab,
    tau: f64,
    rng: &mut RngStream,
) -> Result<Sequence> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::Range(format!("temperature must be >= 0, got {tau}")));
    }
    let mut tokens = Vec::with_capacity(x_t.len());
    for i in 0..x_t.len() {
        let tok = x_t.tokens[i];
        if vocab.is_real(tok) {
            tokens.push(tok);
            continue;
        }
        let d = &out.per_position[i];
        let v = if tau == 0.0 {
            d.argmax()
        } else {
            d.tempered(tau)?.sample(rng)
        };
        tokens.push(v as Token);
    }
    let cand = Sequence::new(tokens);
    debug_assert!(cand.is_clean(vocab), "mask mass contract violated");
    Ok(cand)
}

/// Argmax candidate; identical to `sample_candidate` at `tau = 0` but needs
/// no generator. Used by the kernel-family samplers when recording the
/// clean prediction a step was based on.
pub fn argmax_candidate(out: &DenoiserOutput, x_t: &Sequence, vocab: &Vocab) -> Sequence {
    let tokens = (0..x_t.len())
        .map(|i| {
            let tok = x_t.tokens[i];
            if vocab.is_real(tok) {
                tok
            } else {
                out.per_position[i].argmax() as Token
            }
        })
        .collect();
    Sequence::new(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::ScheduleKind;
    use approx::assert_relative_eq;

    fn chain2_09() -> MarkovChain<f64> {
        MarkovChain::new(vec![0.5, 0.5], vec![vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap()
    }

    fn m() -> Token {
        2
    }

    #[test]
    fn oracle_neighbour_evidence() {
        let den = MarkovOracleDenoiser::new(chain2_09());
        let out = den.denoise(&Sequence::new(vec![m(), 0, m()]), 0.5).unwrap();
        out.validate(&Sequence::new(vec![m(), 0, m()]), &den.vocab())
            .unwrap();
        // One observed neighbour: posterior follows one chain step.
        assert_relative_eq!(out.per_position[0].get(0), 0.9, epsilon = 1e-12);
        assert_relative_eq!(out.per_position[2].get(0), 0.9, epsilon = 1e-12);
        // Carry-over is exact.
        assert_eq!(out.per_position[1].probs(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn oracle_two_step_evidence() {
        let den = MarkovOracleDenoiser::new(chain2_09());
        let out = den.denoise(&Sequence::new(vec![0, m(), m()]), 0.5).unwrap();
        // Two steps from the observed token: 0.9^2 + 0.1^2.
        assert_relative_eq!(out.per_position[2].get(0), 0.82, epsilon = 1e-12);
    }

    #[test]
    fn oracle_conflicting_neighbours_split_evenly() {
        let den = MarkovOracleDenoiser::new(chain2_09());
        let out = den.denoise(&Sequence::new(vec![0, m(), 1]), 0.5).unwrap();
        assert_relative_eq!(out.per_position[1].get(0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(out.per_position[1].get(1), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn oracle_no_evidence_gives_marginals() {
        let skew =
            MarkovChain::new(vec![0.5, 0.5], vec![vec![0.8, 0.2], vec![0.4, 0.6]]).unwrap();
        let den = MarkovOracleDenoiser::new(skew);
        let out = den.denoise(&Sequence::new(vec![m(), m()]), 1.0).unwrap();
        assert_relative_eq!(out.per_position[0].get(0), 0.5, epsilon = 1e-12);
        // Marginal at position 1: 0.5 * 0.8 + 0.5 * 0.4.
        assert_relative_eq!(out.per_position[1].get(0), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn oracle_rejects_impossible_evidence() {
        let ident =
            MarkovChain::new(vec![0.5, 0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let den = MarkovOracleDenoiser::new(ident);
        assert!(matches!(
            den.denoise(&Sequence::new(vec![0, 1]), 0.5),
            Err(Error::ImpossibleEvidence)
        ));
        assert!(matches!(
            den.denoise(&Sequence::new(vec![0, m(), 1]), 0.5),
            Err(Error::ImpossibleEvidence)
        ));
    }

    #[test]
    fn oracle_stays_finite_on_long_inputs() {
        let den = MarkovOracleDenoiser::new(chain2_09());
        let x = Sequence::masked(512, &den.vocab());
        let out = den.denoise(&x, 1.0).unwrap();
        out.validate(&x, &den.vocab()).unwrap();
        for d in &out.per_position {
            assert_relative_eq!(d.get(0), 0.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn tabular_learns_identity_corpus() {
        let v = Vocab::new(2).unwrap();
        let data: Vec<Sequence> = (0..500).map(|_| Sequence::new(vec![0, 0, 0, 0])).collect();
        let sched = NoiseSchedule::new(ScheduleKind::Linear, 8).unwrap();
        let mut rng = RngStream::seeded(7, 0);
        let den = TabularDenoiser::fit(&data, v, &sched, 1.0, 1, &mut rng).unwrap();
        let out = den.denoise(&Sequence::new(vec![0, m(), 0]), 0.5).unwrap();
        assert!(out.per_position[1].get(0) > 0.95);
    }

    #[test]
    fn tabular_unseen_context_smooths_to_uniform() {
        let v = Vocab::new(4).unwrap();
        let counts = vec![vec![0.0; 4]; 36];
        let den = TabularDenoiser::from_counts(v, 1.0, counts).unwrap();
        let x = Sequence::new(vec![4, 4]);
        let out = den.denoise(&x, 0.5).unwrap();
        for i in 0..2 {
            for t in 0..4 {
                assert_relative_eq!(out.per_position[i].get(t), 0.25);
            }
        }
        // lambda = 0 with an empty table also falls back to uniform.
        let den0 = TabularDenoiser::from_counts(v, 0.0, vec![vec![0.0; 4]; 36]).unwrap();
        let out = den0.denoise(&x, 0.5).unwrap();
        assert_relative_eq!(out.per_position[0].get(0), 0.25);
    }

    #[test]
    fn tabular_converges_to_the_bridge_conditional() {
        let chain = chain2_09();
        let v = chain.vocab();
        let sched = NoiseSchedule::new(ScheduleKind::Linear, 8).unwrap();
        let mut rng = RngStream::seeded(13, 0);
        let data: Vec<Sequence> = (0..20_000).map(|_| chain.sample(16, &mut rng)).collect();
        let mut fit_rng = RngStream::seeded(13, 1);
        let den = TabularDenoiser::fit(&data, v, &sched, 1.0, 1, &mut fit_rng).unwrap();

        // With both neighbours observed, the table estimates the exact
        // Markov bridge P(v | a, b), proportional to A[a][v] A[v][b].
        let out = den.denoise(&Sequence::new(vec![0, m(), 0]), 0.5).unwrap();
        assert!(
            (out.per_position[1].get(0) - 0.81 / 0.82).abs() < 0.02,
            "bridge 0_0: {}",
            out.per_position[1].get(0)
        );
        let out = den.denoise(&Sequence::new(vec![0, m(), 1]), 0.5).unwrap();
        assert!((out.per_position[1].get(0) - 0.5).abs() < 0.03);

        // Against the full-evidence oracle the table is only an
        // approximation (it cannot see past masks), so the gap is bounded
        // but not small.
        let oracle = MarkovOracleDenoiser::new(chain.clone());
        let mut tv_sum = 0.0;
        let mut n = 0;
        let mut probe_rng = RngStream::seeded(13, 2);
        let no_clamps = BTreeSet::new();
        for _ in 0..100 {
            let x0 = chain.sample(16, &mut probe_rng);
            let x_t = corrupt(&x0, 0.5, &v, &no_clamps, &mut probe_rng);
            let a = den.denoise(&x_t, 0.5).unwrap();
            let b = oracle.denoise(&x_t, 0.5).unwrap();
            for i in 0..16 {
                if v.is_mask(x_t.tokens[i]) {
                    let tv: f64 = (0..v.n_entries())
                        .map(|e| (a.per_position[i].get(e) - b.per_position[i].get(e)).abs())
                        .sum::<f64>()
                        / 2.0;
                    tv_sum += tv;
                    n += 1;
                }
            }
        }
        let mean_tv = tv_sum / n as f64;
        assert!(mean_tv < 0.2, "mean TV {mean_tv}");
    }

    #[test]
    fn checkpoint_roundtrips() {
        let dir = tempfile::tempdir().unwrap();

        let oracle = MarkovOracleDenoiser::new(chain2_09());
        let p1 = dir.path().join("oracle.json");
        write_denoiser(&p1, &oracle.checkpoint()).unwrap();
        let back = read_denoiser(&p1).unwrap();
        assert!(matches!(back, DenoiserCheckpoint::MarkovOracle { .. }));
        assert!(back.split().is_none());
        let den = back.instantiate().unwrap();
        assert_eq!(den.vocab().size(), 2);

        let v = Vocab::new(2).unwrap();
        let tab = TabularDenoiser::from_counts(v, 0.5, vec![vec![1.0, 2.0]; 16]).unwrap();
        let split = SplitInfo {
            data_digest: "abc".into(),
            train_start: 0,
            train_end: 10,
        };
        let p2 = dir.path().join("tab.json");
        write_denoiser(&p2, &tab.checkpoint().with_split(split.clone())).unwrap();
        let back = read_denoiser(&p2).unwrap();
        assert_eq!(back.split(), Some(&split));

        // Tampered shape is rejected at read time.
        let p3 = dir.path().join("bad.json");
        std::fs::write(
            &p3,
            r#"{"kind":"tabular","vocab":2,"lambda":1.0,"counts":[[1.0,2.0]]}"#,
        )
        .unwrap();
        assert!(read_denoiser(&p3).is_err());
    }

    #[test]
    fn candidate_sampling_modes() {
        let v = Vocab::new(2).unwrap();
        let x_t = Sequence::new(vec![1, m()]);
        let out = DenoiserOutput {
            per_position: vec![
                Dist::point_mass(1, 3),
                Dist::new(vec![0.7, 0.3, 0.0]).unwrap(),
            ],
        };

        // tau = 0: argmax, and no randomness consumed.
        let mut rng = RngStream::seeded(3, 9);
        let cand = sample_candidate(&out, &x_t, &v, 0.0, &mut rng).unwrap();
        assert_eq!(cand.tokens, vec![1, 0]);
        let after = rng.uniform();
        assert_eq!(after, RngStream::seeded(3, 9).uniform());
        assert_eq!(argmax_candidate(&out, &x_t, &v).tokens, vec![1, 0]);

        // tau = 1: frequencies follow the head.
        let mut rng = RngStream::seeded(3, 10);
        let n = 100_000;
        let mut zeros = 0;
        for _ in 0..n {
            let c = sample_candidate(&out, &x_t, &v, 1.0, &mut rng).unwrap();
            assert!(c.is_clean(&v));
            assert_eq!(c.tokens[0], 1);
            if c.tokens[1] == 0 {
                zeros += 1;
            }
        }
        let f = zeros as f64 / n as f64;
        assert!((f - 0.7).abs() < 0.005, "freq {f}");

        // Ties at tau = 0 break to the lowest index.
        let tie = DenoiserOutput {
            per_position: vec![Dist::new(vec![0.5, 0.5, 0.0]).unwrap()],
        };
        let mut rng = RngStream::seeded(3, 11);
        let c = sample_candidate(&tie, &Sequence::new(vec![m()]), &v, 0.0, &mut rng).unwrap();
        assert_eq!(c.tokens, vec![0]);

        assert!(sample_candidate(&out, &x_t, &v, -0.5, &mut rng).is_err());
    }

    #[test]
    fn output_validation_catches_contract_breaks() {
        let v = Vocab::new(2).unwrap();
        let x_t = Sequence::new(vec![0, m()]);
        let leaky = DenoiserOutput {
            per_position: vec![
                Dist::point_mass(0, 3),
                Dist::new(vec![0.5, 0.4, 0.1]).unwrap(),
            ],
        };
        assert!(matches!(
            leaky.validate(&x_t, &v),
            Err(Error::MaskMass { .. })
        ));
        let no_carry = DenoiserOutput {
            per_position: vec![
                Dist::new(vec![0.5, 0.5, 0.0]).unwrap(),
                Dist::point_mass(0, 3),
            ],
        };
        assert!(no_carry.validate(&x_t, &v).is_err());
    }
}
