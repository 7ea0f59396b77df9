//! Corruption schedules and per-position reverse-step kernels.
//!
//! Time runs from `t = 1` (everything masked) to `t = 0` (clean). A schedule
//! maps `t` to the survival probability `alpha(t)`, the chance a position
//! still shows its original token. Reverse steps move from source level
//! `alpha_t` to destination level `alpha_s` with `alpha_s >= alpha_t`.
//!
//! Three kernels cover the samplers: the plain unmasking posterior
//! ([`mdlm_step_dist`]), its remasking generalisation with a per-step budget
//! `sigma` ([`remdm_step_dist`]), and the star-shaped re-corruption of a
//! predicted clean token ([`star_step_dist`]). The star kernel equals the
//! remasking kernel at `sigma = 1 - alpha_s`, which the verification battery
//! checks to 1e-15; keeping the coefficient algebra literal in all three is
//! what makes that identity (and the exact `sigma = 0` degeneration) hold.

use crate::error::Error;
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::types::{Distribution, Sequence, Token, Vocab};
use crate::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Terminal survival level of the log-linear schedule.
pub const LOGLINEAR_EPS: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Loglinear,
}

/// A survival schedule discretised to `steps` uniform time intervals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    steps: usize,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        Ok(NoiseSchedule { kind, steps })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Survival probability at `t in [0, 1]`.
    pub fn alpha<F: Real>(&self, t: F) -> Result<F> {
        if !(t >= F::zero() && t <= F::one()) {
            return Err(Error::Range(format!("schedule time {t} outside [0, 1]")));
        }
        Ok(match self.kind {
            ScheduleKind::Linear => F::one() - t,
            ScheduleKind::Loglinear => (t * F::of(LOGLINEAR_EPS.ln())).exp(),
        })
    }

    /// Grid time of step boundary `k in 0..=steps`.
    pub fn grid_t(&self, k: usize) -> f64 {
        assert!(k <= self.steps, "grid index {k} out of 0..={}", self.steps);
        k as f64 / self.steps as f64
    }

    /// Inverse of [`NoiseSchedule::alpha`]; defined for levels the schedule
    /// actually reaches.
    pub fn time_of_alpha(&self, a: f64) -> Result<f64> {
        let t = match self.kind {
            ScheduleKind::Linear => 1.0 - a,
            ScheduleKind::Loglinear => {
                if a <= 0.0 {
                    return Err(Error::Range(format!("alpha {a} not reachable")));
                }
                a.ln() / LOGLINEAR_EPS.ln()
            }
        };
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Range(format!("alpha {a} not reachable")));
        }
        Ok(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SigmaKind {
    #[default]
    Off,
    Cap,
    Rescale,
    Loopwindow,
}

/// Remasking-budget schedule. `window` is half-open `[start, end)` in
/// execution order (step 0 leaves `t = 1`) and only read by `Loopwindow`.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaSchedule {
    kind: SigmaKind,
    eta: f64,
    window: Option<(usize, usize)>,
}

/// Largest admissible budget for a step `alpha_t -> alpha_s`.
pub fn sigma_max(alpha_t: f64, alpha_s: f64) -> f64 {
    if alpha_t == 0.0 {
        1.0
    } else {
        ((1.0 - alpha_s) / alpha_t).min(1.0)
    }
}

impl SigmaSchedule {
    pub fn new(kind: SigmaKind, eta: f64, window: Option<(usize, usize)>) -> Result<Self> {
        if eta.is_nan() || eta < 0.0 {
            return Err(Error::Config(format!("eta must be >= 0, got {eta}")));
        }
        if kind == SigmaKind::Loopwindow && window.is_none() {
            return Err(Error::Config(
                "loopwindow sigma schedule needs a step window".into(),
            ));
        }
        if let Some((a, b)) = window {
            if a > b {
                return Err(Error::Config(format!("empty-reversed window {a}..{b}")));
            }
        }
        Ok(SigmaSchedule { kind, eta, window })
    }

    pub fn off() -> Self {
        SigmaSchedule {
            kind: SigmaKind::Off,
            eta: 0.0,
            window: None,
        }
    }

    /// Budget for execution-order step `step` moving `alpha_t -> alpha_s`.
    /// Always lands in `[0, sigma_max]`; the kernels re-check and refuse
    /// rather than clamp, so all clamping lives here.
    pub fn sigma_at(&self, step: usize, alpha_t: f64, alpha_s: f64) -> f64 {
        let hi = sigma_max(alpha_t, alpha_s);
        let raw = match self.kind {
            SigmaKind::Off => 0.0,
            SigmaKind::Cap => self.eta,
            SigmaKind::Rescale => self.eta * hi,
            SigmaKind::Loopwindow => {
                let (a, b) = self.window.expect("validated at construction");
                if (a..b).contains(&step) {
                    self.eta
                } else {
                    0.0
                }
            }
        };
        raw.clamp(0.0, hi)
    }
}

fn check_unit<F: Real>(name: &str, x: F) -> Result<()> {
    if !(x >= F::zero() && x <= F::one()) {
        return Err(Error::Range(format!("{name} = {x} outside [0, 1]")));
    }
    Ok(())
}

fn check_xhat0<F: Real>(xhat0: &Distribution<F>, vocab: &Vocab) -> Result<()> {
    if xhat0.len() != vocab.n_entries() {
        return Err(Error::Range(format!(
            "denoiser distribution has {} entries, vocab needs {}",
            xhat0.len(),
            vocab.n_entries()
        )));
    }
    let m = xhat0.get(vocab.mask_id() as usize);
    if m != F::zero() {
        return Err(Error::MaskMass { mass: m.as_f64() });
    }
    Ok(())
}

/// `w_x * xhat0 + w_m * mask`, clipping sub-1e-15 negative rounding residue.
fn mask_mixture<F: Real>(
    vocab: &Vocab,
    w_x: F,
    xhat0: &Distribution<F>,
    w_m: F,
) -> Result<Distribution<F>> {
    let clip = F::of(-1e-15);
    let mut probs = vec![F::zero(); vocab.n_entries()];
    for (v, p) in probs[..vocab.size()].iter_mut().enumerate() {
        *p = w_x * xhat0.get(v);
    }
    probs[vocab.mask_id() as usize] = w_m;
    for p in &mut probs {
        if *p < F::zero() {
            if *p < clip {
                return Err(Error::Range(format!("kernel weight underflow: {p}")));
            }
            *p = F::zero();
        }
    }
    Distribution::new(probs)
}

/// Reverse posterior of the plain unmasking process for one position.
///
/// Unmasked tokens are carried over as a point mass; a masked token moves to
/// the predicted clean token with weight `(alpha_s - alpha_t) / (1 - alpha_t)`
/// and stays masked otherwise. The denoiser distribution must put exactly
/// zero mass on the mask.
pub fn mdlm_step_dist<F: Real>(
    x_t_i: Token,
    alpha_t: F,
    alpha_s: F,
    xhat0: &Distribution<F>,
    vocab: &Vocab,
) -> Result<Distribution<F>> {
    check_unit("alpha_t", alpha_t)?;
    check_unit("alpha_s", alpha_s)?;
    if alpha_s < alpha_t {
        return Err(Error::Range(format!(
            "reverse step must not re-noise: alpha_s = {alpha_s} < alpha_t = {alpha_t}"
        )));
    }
    check_xhat0(xhat0, vocab)?;
    if vocab.is_real(x_t_i) {
        return Ok(Distribution::point_mass(x_t_i as usize, vocab.n_entries()));
    }
    if !vocab.is_mask(x_t_i) {
        return Err(Error::Range(format!("token {x_t_i} outside the alphabet")));
    }
    if alpha_t == F::one() {
        return Err(Error::DegenerateStep);
    }
    let denom = F::one() - alpha_t;
    let w_x = (alpha_s - alpha_t) / denom;
    let w_m = (F::one() - alpha_s) / denom;
    mask_mixture(vocab, w_x, xhat0, w_m)
}

/// Remasking reverse kernel with per-step budget `sigma`.
///
/// An unmasked position is redrawn from the predicted clean distribution
/// with weight `1 - sigma` and remasked with weight `sigma`; a masked
/// position unmaskes with weight `(alpha_s - (1 - sigma) alpha_t) /
/// (1 - alpha_t)`. `sigma` must already satisfy its bound; this kernel
/// refuses out-of-range budgets instead of clamping them.
pub fn remdm_step_dist<F: Real>(
    x_t_i: Token,
    alpha_t: F,
    alpha_s: F,
    sigma: F,
    xhat0: &Distribution<F>,
    vocab: &Vocab,
) -> Result<Distribution<F>> {
    check_unit("alpha_t", alpha_t)?;
    check_unit("alpha_s", alpha_s)?;
    if alpha_s < alpha_t {
        return Err(Error::Range(format!(
            "reverse step must not re-noise: alpha_s = {alpha_s} < alpha_t = {alpha_t}"
        )));
    }
    check_xhat0(xhat0, vocab)?;
    let hi = F::of(sigma_max(alpha_t.as_f64(), alpha_s.as_f64()));
    if !(sigma >= F::zero() && sigma <= hi) {
        return Err(Error::Range(format!(
            "sigma = {sigma} outside [0, {hi}] for alpha_t = {alpha_t}, alpha_s = {alpha_s}"
        )));
    }
    if vocab.is_real(x_t_i) {
        return mask_mixture(vocab, F::one() - sigma, xhat0, sigma);
    }
    if !vocab.is_mask(x_t_i) {
        return Err(Error::Range(format!("token {x_t_i} outside the alphabet")));
    }
    if alpha_t == F::one() {
        return Err(Error::DegenerateStep);
    }
    let denom = F::one() - alpha_t;
    let w_x = (alpha_s - (F::one() - sigma) * alpha_t) / denom;
    let w_m = (F::one() - alpha_s - sigma * alpha_t) / denom;
    mask_mixture(vocab, w_x, xhat0, w_m)
}

/// Star-shaped re-corruption of a committed clean candidate: keep it with
/// probability `alpha_s`, remask otherwise. Equals [`remdm_step_dist`] with
/// `sigma = 1 - alpha_s` and a point-mass prediction on `candidate`.
pub fn star_step_dist<F: Real>(alpha_s: F, candidate: Token, vocab: &Vocab) -> Distribution<F> {
    assert!(
        alpha_s >= F::zero() && alpha_s <= F::one(),
        "alpha_s = {alpha_s} outside [0, 1]"
    );
    assert!(
        vocab.is_real(candidate),
        "star kernel re-corrupts clean candidates, got token {candidate}"
    );
    let mut probs = vec![F::zero(); vocab.n_entries()];
    probs[candidate as usize] = alpha_s;
    probs[vocab.mask_id() as usize] = F::one() - alpha_s;
    Distribution::new(probs).expect("two-point mixture is normalized")
}

/// Forward corruption of a clean sequence to survival level `alpha_t`.
/// Clamped positions never mask; every other position consumes exactly one
/// draw, so trajectories stay aligned across schedule levels.
pub fn corrupt(
    x0: &Sequence,
    alpha_t: f64,
    vocab: &Vocab,
    clamped: &BTreeSet<usize>,
    rng: &mut RngStream,
) -> Sequence {
    assert!((0.0..=1.0).contains(&alpha_t), "alpha_t outside [0, 1]");
    assert!(x0.is_clean(vocab), "corrupt expects a clean sequence");
    let tokens = x0
        .tokens
        .iter()
        .enumerate()
        .map(|(i, &tok)| {
            // Short-circuit keeps clamped positions from consuming a draw.
            if clamped.contains(&i) || rng.uniform() < alpha_t {
                tok
            } else {
                vocab.mask_id()
            }
        })
        .collect();
    Sequence::new(tokens)
}
