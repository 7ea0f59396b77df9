//! Sampler families and the shared trajectory runner.
//!
//! Every family compiles to a flat list of [`StepOp`]s first; the runner
//! interprets the plan with stream-addressed randomness, and the exact
//! enumerator in `verify` interprets the *same* plan symbolically. Keeping
//! one plan representation is what makes the equivalence checks meaningful:
//! the simulated and enumerated processes cannot drift apart structurally.
//!
//! Draw accounting is part of the determinism contract. Kernel steps draw
//! one uniform per non-clamped position (even for point-mass outcomes), so
//! runs at `sigma = 0` are byte-identical to plain unmasking. Star-style
//! steps draw one uniform per masked position to commit a candidate (none at
//! temperature 0) and one per non-clamped position to re-corrupt, except on
//! the final step, which emits the candidate directly. Guided steps replace
//! re-corruption with one Gumbel key per eligible position (none when the
//! remask count is 0 or the selection temperature is 0). Clamped positions
//! never consume randomness anywhere.

use crate::config::{RunConfig, SamplerFamily};
use crate::denoiser::{argmax_candidate, sample_candidate, Denoiser};
use crate::error::Error;
use crate::error_predictor::ErrorPredictor;
use crate::noise::{remdm_step_dist, star_step_dist, NoiseSchedule, SigmaSchedule};
use crate::rng::{stream_id, RngStream, StreamPurpose};
use crate::types::{Sequence, Token};
use crate::Result;
use std::collections::BTreeMap;

/// Step counts of the draft / refine / finish phases of a loop run.
///
/// The loop gets `round(loop_fraction * total_steps)` steps; the remainder
/// splits between draft and finish in the 115:13 ratio of a plain draft
/// run, with at least one finish step so trajectories always end clean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopPlan {
    pub draft_steps: usize,
    pub loop_steps: usize,
    pub finish_steps: usize,
    pub alpha_on: f64,
}

impl LoopPlan {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        let total = cfg.total_steps;
        let loop_steps = (cfg.loop_fraction * total as f64).round() as usize;
        let rest = total - loop_steps.min(total);
        if rest == 0 {
            return Err(Error::Config(format!(
                "loop_fraction = {} leaves no draft or finish steps",
                cfg.loop_fraction
            )));
        }
        let finish_steps = ((rest as f64 * 13.0 / 128.0).round() as usize).clamp(1, rest);
        let draft_steps = rest - finish_steps;
        let alpha_on = cfg.resolved_alpha_on();
        if !(alpha_on > 0.0 && alpha_on < 1.0) {
            return Err(Error::Config(format!(
                "resolved alpha_on = {alpha_on} must be strictly inside (0, 1)"
            )));
        }
        Ok(LoopPlan {
            draft_steps,
            loop_steps,
            finish_steps,
            alpha_on,
        })
    }

    pub fn total(&self) -> usize {
        self.draft_steps + self.loop_steps + self.finish_steps
    }
}

/// One reverse step. `t` is the source time handed to the denoiser.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOp {
    /// Positionwise remasking kernel (`sigma = 0` is plain unmasking).
    Kernel {
        t: f64,
        alpha_t: f64,
        alpha_s: f64,
        sigma: f64,
    },
    /// Commit a candidate, then independently re-corrupt it to `alpha_s`.
    /// The `last` step emits the candidate without re-corruption.
    Star { t: f64, alpha_s: f64, last: bool },
    /// Commit a candidate, then remask the `round((1 - alpha_s) * eligible)`
    /// positions with the highest Gumbel-perturbed error logits.
    Gstar { t: f64, alpha_s: f64 },
    /// Reveal a single uniformly chosen masked position from the denoiser
    /// conditional. Not reachable from configs; the verification battery
    /// uses it to factor chains position by position.
    UnmaskOne { t: f64 },
}

impl StepOp {
    /// Destination survival level, where the op has one.
    pub fn alpha_s(&self) -> Option<f64> {
        match self {
            StepOp::Kernel { alpha_s, .. }
            | StepOp::Star { alpha_s, .. }
            | StepOp::Gstar { alpha_s, .. } => Some(*alpha_s),
            StepOp::UnmaskOne { .. } => None,
        }
    }
}

fn kernel_op(
    sched: &NoiseSchedule,
    sigma_sched: &SigmaSchedule,
    step_index: usize,
    t_hi: f64,
    t_lo: f64,
) -> Result<StepOp> {
    let alpha_t = sched.alpha(t_hi)?;
    let alpha_s = sched.alpha(t_lo)?;
    let sigma = sigma_sched.sigma_at(step_index, alpha_t, alpha_s);
    Ok(StepOp::Kernel {
        t: t_hi,
        alpha_t,
        alpha_s,
        sigma,
    })
}

/// Compile a config to its step plan.
pub fn plan_steps(cfg: &RunConfig) -> Result<Vec<StepOp>> {
    cfg.validate()?;
    let sched = cfg.noise_schedule()?;
    let t_steps = cfg.total_steps;
    let off = SigmaSchedule::off();
    let mut plan = Vec::with_capacity(t_steps);
    match cfg.sampler {
        SamplerFamily::Mdlm | SamplerFamily::Remdm => {
            let sigma_sched = if cfg.sampler == SamplerFamily::Remdm {
                let window = match cfg.sigma {
                    crate::noise::SigmaKind::Loopwindow => {
                        let lp = LoopPlan::from_config(cfg)?;
                        Some((lp.draft_steps, lp.draft_steps + lp.loop_steps))
                    }
                    _ => None,
                };
                SigmaSchedule::new(cfg.sigma, cfg.eta, window)?
            } else {
                off.clone()
            };
            for k in (1..=t_steps).rev() {
                let j = t_steps - k;
                plan.push(kernel_op(
                    &sched,
                    &sigma_sched,
                    j,
                    sched.grid_t(k),
                    sched.grid_t(k - 1),
                )?);
            }
        }
        SamplerFamily::Star => {
            for k in (1..=t_steps).rev() {
                plan.push(StepOp::Star {
                    t: sched.grid_t(k),
                    alpha_s: sched.alpha(sched.grid_t(k - 1))?,
                    last: k == 1,
                });
            }
        }
        SamplerFamily::Hybrid | SamplerFamily::Gstar => {
            for k in (1..=t_steps).rev() {
                let t = sched.grid_t(k);
                let alpha_s = sched.alpha(sched.grid_t(k - 1))?;
                if t > cfg.t_on {
                    plan.push(kernel_op(&sched, &off, t_steps - k, t, sched.grid_t(k - 1))?);
                } else if cfg.sampler == SamplerFamily::Hybrid {
                    plan.push(StepOp::Star {
                        t,
                        alpha_s,
                        last: k == 1,
                    });
                } else {
                    plan.push(StepOp::Gstar { t, alpha_s });
                }
            }
        }
        SamplerFamily::Loop | SamplerFamily::GstarLoop => {
            let lp = LoopPlan::from_config(cfg)?;
            let t_on = sched.time_of_alpha(lp.alpha_on)?;
            let seg = |hi: f64, lo: f64, n: usize, j: usize| -> f64 {
                if j == n {
                    lo
                } else {
                    hi + (lo - hi) * j as f64 / n as f64
                }
            };
            for j in 0..lp.draft_steps {
                plan.push(kernel_op(
                    &sched,
                    &off,
                    j,
                    seg(1.0, t_on, lp.draft_steps, j),
                    seg(1.0, t_on, lp.draft_steps, j + 1),
                )?);
            }
            for _ in 0..lp.loop_steps {
                if cfg.sampler == SamplerFamily::Loop {
                    plan.push(StepOp::Star {
                        t: t_on,
                        alpha_s: lp.alpha_on,
                        last: false,
                    });
                } else {
                    plan.push(StepOp::Gstar {
                        t: t_on,
                        alpha_s: lp.alpha_on,
                    });
                }
            }
            for j in 0..lp.finish_steps {
                plan.push(kernel_op(
                    &sched,
                    &off,
                    lp.draft_steps + lp.loop_steps + j,
                    seg(t_on, 0.0, lp.finish_steps, j),
                    seg(t_on, 0.0, lp.finish_steps, j + 1),
                )?);
            }
        }
    }
    debug_assert_eq!(plan.len(), t_steps);
    Ok(plan)
}

/// Indices of the `n` largest Gumbel-perturbed logits (`logit / tau + G`),
/// ascending. `tau = 0` selects the top logits deterministically with
/// lowest-index tie-breaking; `n = 0` consumes no randomness.
pub fn gumbel_top_n(
    logits: &[f64],
    tau: f64,
    n: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    if n > logits.len() {
        return Err(Error::Range(format!(
            "cannot pick {n} of {} positions",
            logits.len()
        )));
    }
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::Range(format!("temperature must be >= 0, got {tau}")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let keys: Vec<f64> = if tau == 0.0 {
        logits.to_vec()
    } else {
        logits.iter().map(|&l| l / tau + rng.gumbel()).collect()
    };
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    let mut picked: Vec<usize> = order[..n].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// A full sampling run: states (one more than steps), the clean candidate
/// each step committed or implied, the positions each step re-masked, and
/// the destination level per step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Sequence>,
    pub candidates: Vec<Sequence>,
    pub remask_sets: Vec<Vec<usize>>,
    pub alpha_s: Vec<f64>,
}

impl Trajectory {
    pub fn final_state(&self) -> &Sequence {
        self.states.last().expect("at least the initial state")
    }

    pub fn steps(&self) -> usize {
        self.candidates.len()
    }
}

fn initial_state(cfg: &RunConfig) -> Sequence {
    let mut x = Sequence::masked(cfg.sequence_length, &cfg.vocab);
    for &(pos, tok) in &cfg.clamped {
        x.tokens[pos] = tok;
    }
    x
}

/// Execute `plan` with the families' shared semantics.
///
/// `predictor` is required by guided ops and `truth` by the oracle
/// predictor. The generator should be opened fresh per sample via
/// [`sample_rng`] so sample `i` is independent of how many others run.
pub fn run_plan(
    cfg: &RunConfig,
    plan: &[StepOp],
    denoiser: &dyn Denoiser,
    predictor: Option<&ErrorPredictor>,
    truth: Option<&Sequence>,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    let vocab = cfg.vocab;
    if denoiser.vocab() != vocab {
        return Err(Error::Config(format!(
            "denoiser vocab size {} != config vocab size {}",
            denoiser.vocab().size(),
            vocab.size()
        )));
    }
    let clamps: BTreeMap<usize, Token> = cfg.clamp_set();
    let mut x = initial_state(cfg);
    let mut states = vec![x.clone()];
    let mut candidates = Vec::with_capacity(plan.len());
    let mut remask_sets = Vec::with_capacity(plan.len());
    let mut alpha_s_log = Vec::with_capacity(plan.len());

    for op in plan {
        let (next, cand): (Sequence, Sequence) = match *op {
            StepOp::Kernel {
                t,
                alpha_t,
                alpha_s,
                sigma,
            } => {
                let out = denoiser.denoise(&x, t)?;
                out.validate(&x, &vocab)?;
                let cand = argmax_candidate(&out, &x, &vocab);
                let mut tokens = Vec::with_capacity(x.len());
                for i in 0..x.len() {
                    if let Some(&tok) = clamps.get(&i) {
                        tokens.push(tok);
                        continue;
                    }
                    let dist = remdm_step_dist(
                        x.tokens[i],
                        alpha_t,
                        alpha_s,
                        sigma,
                        &out.per_position[i],
                        &vocab,
                    )?;
                    tokens.push(dist.sample(rng) as Token);
                }
                (Sequence::new(tokens), cand)
            }
            StepOp::Star { t, alpha_s, last } => {
                let out = denoiser.denoise(&x, t)?;
                out.validate(&x, &vocab)?;
                let cand = sample_candidate(&out, &x, &vocab, cfg.tau_diffuse, rng)?;
                if last {
                    (cand.clone(), cand)
                } else {
                    let mut tokens = Vec::with_capacity(x.len());
                    for i in 0..x.len() {
                        if let Some(&tok) = clamps.get(&i) {
                            tokens.push(tok);
                            continue;
                        }
                        let dist = star_step_dist(alpha_s, cand.tokens[i], &vocab);
                        tokens.push(dist.sample(rng) as Token);
                    }
                    (Sequence::new(tokens), cand)
                }
            }
            StepOp::Gstar { t, alpha_s } => {
                let out = denoiser.denoise(&x, t)?;
                out.validate(&x, &vocab)?;
                let cand = sample_candidate(&out, &x, &vocab, cfg.tau_diffuse, rng)?;
                let predictor = predictor.ok_or_else(|| {
                    Error::Config("guided sampler needs an error predictor".into())
                })?;
                let fresh: Vec<bool> =
                    x.tokens.iter().map(|&tok| vocab.is_mask(tok)).collect();
                let logits = predictor.predict_logits(&cand, &out, &fresh, truth, &vocab)?;
                let eligible: Vec<usize> =
                    (0..x.len()).filter(|i| !clamps.contains_key(i)).collect();
                let n = (((1.0 - alpha_s) * eligible.len() as f64).round() as usize)
                    .min(eligible.len());
                let picked_logits: Vec<f64> = eligible.iter().map(|&i| logits[i]).collect();
                let chosen = gumbel_top_n(&picked_logits, cfg.tau_remask, n, rng)?;
                let mut next = cand.clone();
                for rel in chosen {
                    next.tokens[eligible[rel]] = vocab.mask_id();
                }
                (next, cand)
            }
            StepOp::UnmaskOne { t } => {
                let out = denoiser.denoise(&x, t)?;
                out.validate(&x, &vocab)?;
                let cand = argmax_candidate(&out, &x, &vocab);
                let masked = x.masked_positions(&vocab);
                let mut next = x.clone();
                if !masked.is_empty() {
                    let j = masked[rng.uniform_index(masked.len())];
                    next.tokens[j] = out.per_position[j].sample(rng) as Token;
                }
                (next, cand)
            }
        };
        let committed: &Sequence = match op {
            StepOp::Kernel { .. } | StepOp::UnmaskOne { .. } => &x,
            StepOp::Star { .. } | StepOp::Gstar { .. } => &cand,
        };
        let remasked: Vec<usize> = (0..next.len())
            .filter(|&i| vocab.is_mask(next.tokens[i]) && !vocab.is_mask(committed.tokens[i]))
            .collect();
        let alpha_s = op.alpha_s().unwrap_or_else(|| {
            (next.len() - next.count_masked(&vocab)) as f64 / next.len().max(1) as f64
        });
        candidates.push(cand);
        remask_sets.push(remasked);
        alpha_s_log.push(alpha_s);
        states.push(next.clone());
        x = next;
    }
    Ok(Trajectory {
        states,
        candidates,
        remask_sets,
        alpha_s: alpha_s_log,
    })
}

/// Plan and run one sample.
pub fn run_trajectory(
    cfg: &RunConfig,
    denoiser: &dyn Denoiser,
    predictor: Option<&ErrorPredictor>,
    truth: Option<&Sequence>,
    rng: &mut RngStream,
) -> Result<Trajectory> {
    let plan = plan_steps(cfg)?;
    run_plan(cfg, &plan, denoiser, predictor, truth, rng)
}

/// Generator for sample `index` of a run: stream-addressed, so batches are
/// identical for any worker count.
pub fn sample_rng(cfg: &RunConfig, index: u64) -> RngStream {
    RngStream::seeded(cfg.base_seed, stream_id(StreamPurpose::Sample, index))
}

/// Generator for the paired ground-truth sequence of sample `index`.
pub fn truth_rng(cfg: &RunConfig, index: u64) -> RngStream {
    RngStream::seeded(cfg.base_seed, stream_id(StreamPurpose::Truth, index))
}
