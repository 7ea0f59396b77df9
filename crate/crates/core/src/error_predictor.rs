//! Predicting which committed tokens are wrong.
//!
//! Guided remasking needs a per-position error score for a clean candidate
//! sequence. Three variants share one interface: a logistic regressor over
//! explicit features, a training-free entropy heuristic, and a ground-truth
//! oracle used to upper-bound what guidance can buy.
//!
//! Training rows follow the corruption-and-denoise recipe: corrupt a clean
//! sequence to a random level, let the denoiser commit a candidate at
//! temperature 1, and label each position by whether the candidate disagrees
//! with the original. Carry-over positions can never disagree, so their
//! label is always 0.

use crate::denoiser::{sample_candidate, Denoiser, DenoiserOutput};
use crate::error::Error;
use crate::noise::{corrupt, NoiseSchedule};
use crate::rng::RngStream;
use crate::types::{Sequence, Vocab};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// Logit magnitude the oracle assigns (positive for a wrong token).
pub const ORACLE_LOGIT: f64 = 10.0;

/// Features per position, in order: probability the denoiser gave the chosen
/// token, entropy (nats) of its distribution, fresh indicator, normalized
/// position, one-hot of the chosen token, constant bias.
pub fn feature_dim(vocab: &Vocab) -> usize {
    vocab.size() + 5
}

/// Feature vectors for every position of a candidate.
///
/// `fresh[i]` marks positions that were masked in the input the candidate
/// was committed from (everything else is carry-over).
pub fn features(
    candidate: &Sequence,
    out: &DenoiserOutput,
    fresh: &[bool],
    vocab: &Vocab,
) -> Vec<Vec<f64>> {
    let len = candidate.len();
    assert_eq!(out.per_position.len(), len);
    assert_eq!(fresh.len(), len);
    let mut rows = Vec::with_capacity(len);
    for (i, &fr) in fresh.iter().enumerate() {
        let d = &out.per_position[i];
        let tok = candidate.tokens[i] as usize;
        assert!(tok < vocab.size(), "candidate must be clean");
        let mut phi = Vec::with_capacity(feature_dim(vocab));
        phi.push(d.get(tok));
        phi.push(d.entropy());
        phi.push(if fr { 1.0 } else { 0.0 });
        phi.push(if len > 1 {
            i as f64 / (len - 1) as f64
        } else {
            0.0
        });
        for v in 0..vocab.size() {
            phi.push(if v == tok { 1.0 } else { 0.0 });
        }
        phi.push(1.0);
        rows.push(phi);
    }
    rows
}

/// One labelled training example.
#[derive(Clone, Debug)]
pub struct TrainRow {
    pub features: Vec<f64>,
    pub label: bool,
    pub fresh: bool,
}

/// Rows for one sequence at one corruption level: time `t` with survival
/// probability `alpha`.
pub fn rows_for_sequence(
    x0: &Sequence,
    t: f64,
    alpha: f64,
    denoiser: &dyn Denoiser,
    rng: &mut RngStream,
) -> Result<Vec<TrainRow>> {
    let vocab = denoiser.vocab();
    let no_clamps = BTreeSet::new();
    let x_t = corrupt(x0, alpha, &vocab, &no_clamps, rng);
    let out = denoiser.denoise(&x_t, t)?;
    let cand = sample_candidate(&out, &x_t, &vocab, 1.0, rng)?;
    let fresh: Vec<bool> = x_t.tokens.iter().map(|&tok| vocab.is_mask(tok)).collect();
    let phis = features(&cand, &out, &fresh, &vocab);
    Ok(phis
        .into_iter()
        .enumerate()
        .map(|(i, features)| TrainRow {
            features,
            label: cand.tokens[i] != x0.tokens[i],
            fresh: fresh[i],
        })
        .collect())
}

/// Build the full training set: one corruption per sequence per pass, with
/// `t ~ U(0, 1)` mapped through the schedule.
pub fn build_training_rows(
    data: &[Sequence],
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    passes: usize,
    rng: &mut RngStream,
) -> Result<Vec<TrainRow>> {
    if passes == 0 {
        return Err(Error::Config("need at least one pass".into()));
    }
    let mut rows = Vec::new();
    for _ in 0..passes {
        for x0 in data {
            let t = rng.uniform();
            let alpha = schedule.alpha(t).expect("t is in [0, 1)");
            rows.extend(rows_for_sequence(x0, t, alpha, denoiser, rng)?);
        }
    }
    Ok(rows)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean weighted cross-entropy and its gradient at `w`.
///
/// Positive rows are weighted by `pos_weight`; the loss per row is
/// `pos_weight * y * ln(1 + e^-s) + (1 - y) * ln(1 + e^s)` with `s = w . phi`.
pub fn loss_and_grad(w: &[f64], rows: &[TrainRow], pos_weight: f64) -> (f64, Vec<f64>) {
    assert!(!rows.is_empty());
    let n = rows.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0f64; w.len()];
    for row in rows {
        assert_eq!(row.features.len(), w.len(), "feature dimension mismatch");
        let s: f64 = w.iter().zip(&row.features).map(|(a, b)| a * b).sum();
        let (l, dl_ds) = if row.label {
            (pos_weight * softplus(-s), pos_weight * (sigmoid(s) - 1.0))
        } else {
            (softplus(s), sigmoid(s))
        };
        loss += l;
        for (g, phi) in grad.iter_mut().zip(&row.features) {
            *g += dl_ds * phi;
        }
    }
    loss /= n;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss, grad)
}

#[derive(Clone, Debug)]
pub struct LogisticHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop early once the loss improves by less than this between epochs.
    pub loss_tol: f64,
    /// Weight positive rows by `negatives / positives`.
    pub class_balance: bool,
}

impl Default for LogisticHyper {
    fn default() -> Self {
        LogisticHyper {
            learning_rate: 0.5,
            epochs: 400,
            loss_tol: 1e-8,
            class_balance: true,
        }
    }
}

/// Trained weights; `degenerate` marks a constant predictor fitted to a
/// single-class training set.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub degenerate: bool,
}

impl LogisticModel {
    pub fn score(&self, phi: &[f64]) -> f64 {
        assert_eq!(phi.len(), self.weights.len(), "feature dimension mismatch");
        self.weights.iter().zip(phi).map(|(a, b)| a * b).sum()
    }
}

/// Full-batch gradient descent from zero weights.
///
/// Returns the model and the per-epoch loss curve. A single-class training
/// set yields a constant predictor (bias at `+-ORACLE_LOGIT`) flagged as
/// degenerate, with an empty curve.
pub fn train_logistic(rows: &[TrainRow], hyper: &LogisticHyper) -> Result<(LogisticModel, Vec<f64>)> {
    if rows.is_empty() {
        return Err(Error::Config("no training rows".into()));
    }
    let dim = rows[0].features.len();
    let n_pos = rows.iter().filter(|r| r.label).count();
    let n_neg = rows.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        let mut weights = vec![0.0; dim];
        weights[dim - 1] = if n_pos > 0 { ORACLE_LOGIT } else { -ORACLE_LOGIT };
        return Ok((
            LogisticModel {
                weights,
                degenerate: true,
            },
            Vec::new(),
        ));
    }
    let pos_weight = if hyper.class_balance {
        n_neg as f64 / n_pos as f64
    } else {
        1.0
    };
    let mut w = vec![0.0f64; dim];
    let mut curve = Vec::with_capacity(hyper.epochs);
    let mut prev_loss = f64::INFINITY;
    for _ in 0..hyper.epochs {
        let (loss, grad) = loss_and_grad(&w, rows, pos_weight);
        curve.push(loss);
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= hyper.learning_rate * gi;
        }
        if (prev_loss - loss).abs() < hyper.loss_tol {
            break;
        }
        prev_loss = loss;
    }
    Ok((
        LogisticModel {
            weights: w,
            degenerate: false,
        },
        curve,
    ))
}

/// Area under the ROC curve by rank statistic, ties averaged. `None` when
/// either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j + 2) as f64 / 2.0; // 1-based ranks
        for &k in &order[i..=j] {
            ranks[k] = mean_rank;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(r, _)| r)
        .sum();
    let auc = (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;
    Some(auc)
}

/// Error scorer used by guided remasking.
pub enum ErrorPredictor {
    Logistic(LogisticModel),
    Entropy,
    Oracle,
}

impl ErrorPredictor {
    /// Per-position error logits for a committed candidate. Higher means
    /// more likely wrong. The oracle variant needs `truth`.
    pub fn predict_logits(
        &self,
        candidate: &Sequence,
        out: &DenoiserOutput,
        fresh: &[bool],
        truth: Option<&Sequence>,
        vocab: &Vocab,
    ) -> Result<Vec<f64>> {
        match self {
            ErrorPredictor::Logistic(model) => {
                let phis = features(candidate, out, fresh, vocab);
                Ok(phis.iter().map(|phi| model.score(phi)).collect())
            }
            ErrorPredictor::Entropy => Ok(out.per_position.iter().map(|d| d.entropy()).collect()),
            ErrorPredictor::Oracle => {
                let truth = truth.ok_or(Error::MissingGroundTruth)?;
                if truth.len() != candidate.len() {
                    return Err(Error::Config(format!(
                        "truth length {} != candidate length {}",
                        truth.len(),
                        candidate.len()
                    )));
                }
                Ok(candidate
                    .tokens
                    .iter()
                    .zip(&truth.tokens)
                    .map(|(c, t)| if c == t { -ORACLE_LOGIT } else { ORACLE_LOGIT })
                    .collect())
            }
        }
    }

    pub fn checkpoint(&self) -> PredictorCheckpoint {
        match self {
            ErrorPredictor::Logistic(m) => PredictorCheckpoint::Logistic {
                weights: m.weights.clone(),
                degenerate: m.degenerate,
            },
            ErrorPredictor::Entropy => PredictorCheckpoint::Entropy,
            ErrorPredictor::Oracle => PredictorCheckpoint::Oracle,
        }
    }
}

/// On-disk predictor, discriminated by `"kind"`.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorCheckpoint {
    Logistic {
        weights: Vec<f64>,
        #[serde(default)]
        degenerate: bool,
    },
    Entropy,
    Oracle,
}

impl PredictorCheckpoint {
    pub fn instantiate(&self) -> Result<ErrorPredictor> {
        match self {
            PredictorCheckpoint::Logistic {
                weights,
                degenerate,
            } => {
                if weights.is_empty() {
                    return Err(Error::Config("empty weight vector".into()));
                }
                Ok(ErrorPredictor::Logistic(LogisticModel {
                    weights: weights.clone(),
                    degenerate: *degenerate,
                }))
            }
            PredictorCheckpoint::Entropy => Ok(ErrorPredictor::Entropy),
            PredictorCheckpoint::Oracle => Ok(ErrorPredictor::Oracle),
        }
    }
}

pub fn write_predictor<P: AsRef<Path>>(path: P, ckpt: &PredictorCheckpoint) -> Result<()> {
    let json = serde_json::to_string_pretty(ckpt)?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_predictor<P: AsRef<Path>>(path: P) -> Result<PredictorCheckpoint> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: PredictorCheckpoint = serde_json::from_str(&text)?;
    ckpt.instantiate()?;
    Ok(ckpt)
}
