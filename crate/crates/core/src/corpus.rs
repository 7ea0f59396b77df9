//! Synthetic corpora with tractable likelihoods, plus dataset files.
//!
//! Two sources: first-order Markov chains (exact sequence likelihoods, exact
//! posteriors, known entropy rate) and bounded-depth Dyck bracket strings
//! (a hard syntactic invariant that samplers can violate). Both stay small
//! enough that model-free oracles can check everything downstream.
//!
//! Dataset files are JSON lines, one `{"tokens": [...]}` object per line,
//! clean sequences only.

use crate::error::Error;
use crate::rng::{sample_categorical, RngStream};
use crate::scalar::Real;
use crate::types::{Sequence, Token, Vocab};
use crate::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Serialized form of a chain: initial law `pi` and row-stochastic `A`.
#[derive(Clone, Serialize, Deserialize)]
pub struct RawChain<F> {
    pub pi: Vec<F>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<F>>,
}

/// First-order Markov chain over `0..size`, validated row-stochastic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawChain<F>",
    into = "RawChain<F>",
    bound(
        serialize = "F: Real + Serialize",
        deserialize = "F: Real + serde::de::DeserializeOwned"
    )
)]
pub struct MarkovChain<F: Real> {
    pi: Vec<F>,
    a: Vec<Vec<F>>,
}

fn check_stochastic<F: Real>(name: &str, v: &[F]) -> Result<()> {
    if let Some(p) = v.iter().find(|p| p.is_nan() || **p < F::zero()) {
        return Err(Error::Config(format!("{name} has negative entry {p}")));
    }
    let sum: F = v.iter().copied().sum();
    let err = (sum.as_f64() - 1.0).abs();
    if !err.is_finite() || err > crate::types::NORMALIZATION_TOL {
        return Err(Error::NotNormalized { sum: sum.as_f64() });
    }
    Ok(())
}

impl<F: Real> MarkovChain<F> {
    pub fn new(pi: Vec<F>, a: Vec<Vec<F>>) -> Result<Self> {
        let n = pi.len();
        if n < 2 {
            return Err(Error::Config(format!(
                "chain needs at least 2 states, got {n}"
            )));
        }
        if a.len() != n || a.iter().any(|row| row.len() != n) {
            return Err(Error::Config(format!(
                "transition matrix must be {n} x {n}"
            )));
        }
        check_stochastic("pi", &pi)?;
        for (i, row) in a.iter().enumerate() {
            check_stochastic(&format!("row {i}"), row)?;
        }
        Ok(MarkovChain { pi, a })
    }

    /// Number of states; equals the vocabulary size of the corpus.
    pub fn size(&self) -> usize {
        self.pi.len()
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.size()).expect("chain has at least 2 states")
    }

    pub fn pi(&self) -> &[F] {
        &self.pi
    }

    pub fn row(&self, v: usize) -> &[F] {
        &self.a[v]
    }

    pub fn sample(&self, len: usize, rng: &mut RngStream) -> Sequence {
        let mut tokens = Vec::with_capacity(len);
        let mut prev: Option<usize> = None;
        for _ in 0..len {
            let probs = match prev {
                None => &self.pi,
                Some(v) => &self.a[v],
            };
            let v = sample_categorical(probs, rng).expect("chain rows are validated");
            tokens.push(v as Token);
            prev = Some(v);
        }
        Sequence::new(tokens)
    }

    /// Exact log-likelihood; `-inf` when the sequence is impossible.
    pub fn logprob(&self, x: &Sequence) -> F {
        let ln = |p: F| {
            if p > F::zero() {
                p.ln()
            } else {
                F::neg_infinity()
            }
        };
        let mut lp = F::zero();
        for (i, &tok) in x.tokens.iter().enumerate() {
            let v = tok as usize;
            assert!(v < self.size(), "logprob expects clean in-vocab sequences");
            lp = lp
                + if i == 0 {
                    ln(self.pi[v])
                } else {
                    ln(self.a[x.tokens[i - 1] as usize][v])
                };
        }
        lp
    }

    /// Stationary law by power iteration to an L1 tolerance of 1e-13.
    pub fn stationary(&self) -> Vec<F> {
        let n = self.size();
        let mut s: Vec<F> = self.pi.clone();
        let tol = F::of(1e-13);
        for _ in 0..100_000 {
            let mut next = vec![F::zero(); n];
            for (sv, row) in s.iter().zip(&self.a) {
                for (x, a_vu) in next.iter_mut().zip(row) {
                    *x = *x + *sv * *a_vu;
                }
            }
            let total: F = next.iter().copied().sum();
            for x in &mut next {
                *x = *x / total;
            }
            let delta: F = next
                .iter()
                .zip(&s)
                .map(|(a, b)| (*a - *b).abs())
                .sum();
            s = next;
            if delta < tol {
                break;
            }
        }
        s
    }

    /// Entropy rate in nats per token under the stationary law.
    pub fn entropy_rate(&self) -> F {
        let s = self.stationary();
        let mut h = F::zero();
        for (sv, row) in s.iter().zip(&self.a) {
            for &p in row {
                if p > F::zero() {
                    h = h - *sv * p * p.ln();
                }
            }
        }
        h
    }
}

impl<F: Real> TryFrom<RawChain<F>> for MarkovChain<F> {
    type Error = Error;
    fn try_from(raw: RawChain<F>) -> Result<Self> {
        MarkovChain::new(raw.pi, raw.a)
    }
}

impl<F: Real> From<MarkovChain<F>> for RawChain<F> {
    fn from(c: MarkovChain<F>) -> Self {
        RawChain { pi: c.pi, a: c.a }
    }
}

/// Bounded-depth Dyck strings over `pairs` bracket types.
///
/// Token layout: open bracket `i` is `2i`, its close is `2i + 1`, and
/// `2 * pairs` is the pad symbol, so the vocabulary has `2 * pairs + 1` real
/// tokens. Samples are a uniformly chosen balanced word (uniform over all
/// depth-bounded words of its semilength, with bracket types drawn uniformly
/// per pair) padded to the configured length.
#[derive(Clone, Debug)]
pub struct DyckSource {
    pairs: usize,
    max_depth: usize,
    length: usize,
    /// `counts[n][d]`: depth-<= d balanced shapes of semilength n.
    counts: Vec<Vec<f64>>,
}

/// Serialized parameters of a [`DyckSource`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DyckSpec {
    pub pairs: usize,
    pub max_depth: usize,
    pub length: usize,
}

impl DyckSource {
    pub fn new(pairs: usize, max_depth: usize, length: usize) -> Result<Self> {
        if pairs == 0 {
            return Err(Error::Config("need at least one bracket pair".into()));
        }
        if max_depth == 0 {
            return Err(Error::Config("max depth must be at least 1".into()));
        }
        if length < 2 {
            return Err(Error::Config(format!(
                "length must fit one bracket pair, got {length}"
            )));
        }
        let n_max = length / 2;
        // counts[n][d] over the Motzkin-style recursion: first pair closes
        // after an inner word (depth budget d - 1) and is followed by an
        // outer word (budget d). f64 keeps big totals; sampling ratios stay
        // accurate far beyond desk lengths.
        let mut counts = vec![vec![0.0f64; max_depth + 1]; n_max + 1];
        counts[0].fill(1.0);
        for n in 1..=n_max {
            for d in 1..=max_depth {
                let mut total = 0.0;
                for i in 0..n {
                    total += counts[i][d - 1] * counts[n - 1 - i][d];
                }
                counts[n][d] = total;
            }
        }
        Ok(DyckSource {
            pairs,
            max_depth,
            length,
            counts,
        })
    }

    pub fn from_spec(spec: &DyckSpec) -> Result<Self> {
        DyckSource::new(spec.pairs, spec.max_depth, spec.length)
    }

    pub fn spec(&self) -> DyckSpec {
        DyckSpec {
            pairs: self.pairs,
            max_depth: self.max_depth,
            length: self.length,
        }
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(2 * self.pairs + 1).expect("at least 3 symbols")
    }

    pub fn pad_id(&self) -> Token {
        (2 * self.pairs) as Token
    }

    pub fn length(&self) -> usize {
        self.length
    }

    fn shape_into(&self, n: usize, d: usize, out: &mut Vec<bool>, rng: &mut RngStream) {
        if n == 0 {
            return;
        }
        // Split n - 1 remaining pairs between inside (depth d - 1) and after.
        let weights: Vec<f64> = (0..n)
            .map(|i| self.counts[i][d - 1] * self.counts[n - 1 - i][d])
            .collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.uniform() * total;
        let mut split = n - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                split = i;
                break;
            }
            u -= w;
        }
        out.push(true);
        self.shape_into(split, d - 1, out, rng);
        out.push(false);
        self.shape_into(n - 1 - split, d, out, rng);
    }

    pub fn sample(&self, rng: &mut RngStream) -> Sequence {
        let n_max = self.length / 2;
        let n = 1 + rng.uniform_index(n_max);
        let mut shape = Vec::with_capacity(2 * n);
        self.shape_into(n, self.max_depth, &mut shape, rng);
        debug_assert_eq!(shape.len(), 2 * n);

        let mut tokens = Vec::with_capacity(self.length);
        let mut stack = Vec::new();
        for is_open in shape {
            if is_open {
                let kind = rng.uniform_index(self.pairs);
                stack.push(kind);
                tokens.push((2 * kind) as Token);
            } else {
                let kind = stack.pop().expect("shape is balanced");
                tokens.push((2 * kind + 1) as Token);
            }
        }
        tokens.resize(self.length, self.pad_id());
        Sequence::new(tokens)
    }

    /// Well-formedness: a nonempty balanced, type-matched, depth-bounded
    /// word followed only by padding.
    pub fn is_valid(&self, seq: &Sequence) -> bool {
        if seq.len() != self.length {
            return false;
        }
        let mut stack: Vec<usize> = Vec::new();
        let mut word_len = 0;
        let mut in_pad = false;
        for &tok in &seq.tokens {
            let t = tok as usize;
            if t > 2 * self.pairs {
                return false;
            }
            if t == 2 * self.pairs {
                in_pad = true;
                continue;
            }
            if in_pad {
                return false; // bracket after padding started
            }
            word_len += 1;
            if t.is_multiple_of(2) {
                stack.push(t / 2);
                if stack.len() > self.max_depth {
                    return false;
                }
            } else {
                match stack.pop() {
                    Some(kind) if kind == t / 2 => {}
                    _ => return false,
                }
            }
        }
        stack.is_empty() && word_len > 0
    }
}

/// Strict dataset record; rejects unknown fields so typos surface as errors.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    tokens: Vec<Token>,
}

/// Write sequences as JSON lines.
pub fn write_dataset<P: AsRef<Path>>(path: P, seqs: &[Sequence]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in seqs {
        serde_json::to_writer(
            &mut f,
            &Record {
                tokens: s.tokens.clone(),
            },
        )?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Read a JSON-lines dataset, checking every id against the vocabulary.
/// Errors carry 1-based line numbers.
pub fn read_dataset<P: AsRef<Path>>(path: P, vocab: &Vocab) -> Result<Vec<Sequence>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in f.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if let Some(&bad) = rec.tokens.iter().find(|&&t| !vocab.is_real(t)) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!(
                    "token id {bad} out of range for vocab size {}",
                    vocab.size()
                ),
            });
        }
        out.push(Sequence::new(rec.tokens));
    }
    Ok(out)
}

/// Content digest of a dataset, for asserting that train and holdout slices
/// came from the same file.
pub fn dataset_digest(seqs: &[Sequence]) -> String {
    let mut h = Sha256::new();
    for s in seqs {
        h.update((s.len() as u64).to_le_bytes());
        for &t in &s.tokens {
            h.update(t.to_le_bytes());
        }
    }
    let out = h.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::HashMap;

    pub fn chain2_09() -> MarkovChain<f64> {
        MarkovChain::new(
            vec![0.5, 0.5],
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        )
        .unwrap()
    }

    #[test]
    fn chain_validation() {
        assert!(MarkovChain::<f64>::new(vec![1.0], vec![vec![1.0]]).is_err());
        assert!(
            MarkovChain::<f64>::new(vec![0.5, 0.5], vec![vec![0.8, 0.1], vec![0.5, 0.5]]).is_err()
        );
        assert!(MarkovChain::<f64>::new(vec![0.5, 0.5], vec![vec![1.0, 0.0]]).is_err());
        assert!(
            MarkovChain::<f64>::new(vec![-0.5, 1.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]])
                .is_err()
        );
    }

    #[test]
    fn chain_serde_shape() {
        let c = chain2_09();
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"pi\""));
        assert!(json.contains("\"A\""));
        let back: MarkovChain<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        let bad = r#"{"pi":[0.5,0.5],"A":[[0.9,0.2],[0.1,0.9]]}"#;
        assert!(serde_json::from_str::<MarkovChain<f64>>(bad).is_err());
    }

    #[test]
    fn sampling_matches_transition_probabilities() {
        let c = chain2_09();
        let mut rng = RngStream::seeded(11, 0);
        let n = 100_000;
        let mut same = 0;
        for _ in 0..n {
            let s = c.sample(2, &mut rng);
            assert!(s.is_clean(&c.vocab()));
            if s.tokens[0] == s.tokens[1] {
                same += 1;
            }
        }
        let rate = same as f64 / n as f64;
        assert!((rate - 0.9).abs() < 0.005, "repeat rate {rate}");
    }

    #[test]
    fn logprob_hand_value() {
        let c = chain2_09();
        let lp = c.logprob(&Sequence::new(vec![0, 0, 0]));
        assert_relative_eq!(lp, (0.5f64 * 0.9 * 0.9).ln(), epsilon = 1e-12);
        assert_relative_eq!(lp, -0.903868, epsilon = 1e-5);
    }

    #[test]
    fn logprob_impossible_is_neg_inf() {
        let c = MarkovChain::<f64>::new(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap();
        assert_eq!(c.logprob(&Sequence::new(vec![0, 1])), f64::NEG_INFINITY);
        assert_eq!(c.logprob(&Sequence::new(vec![1])), f64::NEG_INFINITY);
    }

    #[test]
    fn logprobs_sum_to_one_exhaustively() {
        let c = chain2_09();
        let mut total = 0.0;
        for bits in 0..8u32 {
            let seq = Sequence::new(vec![bits & 1, (bits >> 1) & 1, (bits >> 2) & 1]);
            total += c.logprob(&seq).exp();
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_and_entropy_rate() {
        let c = chain2_09();
        let s = c.stationary();
        assert_relative_eq!(s[0], 0.5, epsilon = 1e-10);
        let h = c.entropy_rate();
        let expect = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        assert_relative_eq!(h, expect, epsilon = 1e-10);

        let skew = MarkovChain::<f64>::new(
            vec![0.5, 0.5],
            vec![vec![0.8, 0.2], vec![0.4, 0.6]],
        )
        .unwrap();
        let s = skew.stationary();
        assert_relative_eq!(s[0], 2.0 / 3.0, epsilon = 1e-10);
        assert_relative_eq!(s[1], 1.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn dyck_tokens_and_validation() {
        let d = DyckSource::new(1, 2, 4).unwrap();
        assert_eq!(d.vocab().size(), 3);
        assert_eq!(d.pad_id(), 2);
        assert!(d.is_valid(&Sequence::new(vec![0, 1, 2, 2])));
        assert!(d.is_valid(&Sequence::new(vec![0, 0, 1, 1])));
        assert!(!d.is_valid(&Sequence::new(vec![0, 1, 2, 0]))); // bracket after pad
        assert!(!d.is_valid(&Sequence::new(vec![1, 0, 1, 2]))); // close first
        assert!(!d.is_valid(&Sequence::new(vec![2, 2, 2, 2]))); // empty word
        let shallow = DyckSource::new(1, 1, 4).unwrap();
        assert!(!shallow.is_valid(&Sequence::new(vec![0, 0, 1, 1]))); // too deep
    }

    #[test]
    fn dyck_matches_types() {
        let d = DyckSource::new(2, 3, 6).unwrap();
        // ( [ ] ) with pads: 0 2 3 1 4 4
        assert!(d.is_valid(&Sequence::new(vec![0, 2, 3, 1, 4, 4])));
        // ( [ ) ] mismatched
        assert!(!d.is_valid(&Sequence::new(vec![0, 2, 1, 3, 4, 4])));
    }

    #[test]
    fn dyck_smallest_case_is_constant() {
        let d = DyckSource::new(1, 1, 2).unwrap();
        let mut rng = RngStream::seeded(0, 0);
        for _ in 0..20 {
            assert_eq!(d.sample(&mut rng).tokens, vec![0, 1]);
        }
    }

    #[test]
    fn dyck_semilength_then_shape_distribution() {
        // length 4, one pair, depth 2: semilength is uniform on {1, 2}, and
        // the two semilength-2 words split evenly.
        let d = DyckSource::new(1, 2, 4).unwrap();
        let mut rng = RngStream::seeded(21, 0);
        let mut counts: HashMap<Vec<Token>, usize> = HashMap::new();
        let n = 40_000;
        for _ in 0..n {
            let s = d.sample(&mut rng);
            assert!(d.is_valid(&s));
            *counts.entry(s.tokens).or_default() += 1;
        }
        assert_eq!(counts.len(), 3);
        let f = |t: &[Token]| counts.get(t).copied().unwrap_or(0) as f64 / n as f64;
        assert!((f(&[0, 1, 2, 2]) - 0.5).abs() < 0.02);
        assert!((f(&[0, 1, 0, 1]) - 0.25).abs() < 0.02);
        assert!((f(&[0, 0, 1, 1]) - 0.25).abs() < 0.02);
    }

    #[test]
    fn dyck_depth_bound_respected_in_samples() {
        let d = DyckSource::new(3, 2, 12).unwrap();
        let mut rng = RngStream::seeded(5, 0);
        for _ in 0..1000 {
            assert!(d.is_valid(&d.sample(&mut rng)));
        }
    }

    #[test]
    fn dataset_roundtrip() {
        let v = Vocab::new(4).unwrap();
        let c = MarkovChain::<f64>::new(
            vec![0.25; 4],
            vec![vec![0.25; 4]; 4],
        )
        .unwrap();
        let mut rng = RngStream::seeded(1, 0);
        let seqs: Vec<Sequence> = (0..1000).map(|_| c.sample(8, &mut rng)).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &seqs).unwrap();
        let back = read_dataset(&path, &v).unwrap();
        assert_eq!(back, seqs);
    }

    #[test]
    fn dataset_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocab::new(4).unwrap();

        let path = dir.path().join("bad_id.jsonl");
        std::fs::write(&path, "{\"tokens\":[0,1]}\n{\"tokens\":[0,999]}\n").unwrap();
        match read_dataset(&path, &v) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("999"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let path = dir.path().join("bad_json.jsonl");
        std::fs::write(&path, "{\"tokens\":[0,1]}\nnot json\n").unwrap();
        match read_dataset(&path, &v) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        let path = dir.path().join("extra.jsonl");
        std::fs::write(&path, "{\"tokens\":[0],\"note\":1}\n").unwrap();
        assert!(matches!(
            read_dataset(&path, &v),
            Err(Error::Parse { line: 1, .. })
        ));

        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        assert_eq!(read_dataset(&path, &v).unwrap().len(), 0);
    }

    #[test]
    fn digest_tracks_content() {
        let a = vec![Sequence::new(vec![0, 1]), Sequence::new(vec![2])];
        let b = vec![Sequence::new(vec![0, 1]), Sequence::new(vec![3])];
        assert_eq!(dataset_digest(&a), dataset_digest(&a));
        assert_ne!(dataset_digest(&a), dataset_digest(&b));
    }
}
