//! Exact enumeration of sampler-induced distributions and the numeric
//! check battery — the ground-truth engine of the crate.
//!
//! The enumerator interprets the same step plans as the runner in
//! `samplers`, but expands every categorical branch symbolically with exact
//! probability bookkeeping instead of drawing. Both sides call the same
//! kernel functions with the same arguments, so any disagreement between a
//! simulated histogram and an enumerated distribution points at the
//! randomness plumbing, not at a re-derivation of the math.
//!
//! Kernel and plain star steps factor across positions (the committed
//! candidate integrates out position-by-position), so their expansion is a
//! per-position product. Guided steps do not factor — the remask set
//! depends on all positions jointly — so those branch over full candidate
//! assignments and then over remask sets, whose probabilities under
//! Gumbel-Top-N selection follow the Plackett–Luce chain of softmax picks
//! without replacement.

use crate::config::{RunConfig, SamplerFamily};
use crate::corpus::MarkovChain;
use crate::denoiser::{Denoiser, MarkovOracleDenoiser};
use crate::error::Error;
use crate::error_predictor::ErrorPredictor;
use crate::noise::{corrupt, mdlm_step_dist, remdm_step_dist, ScheduleKind, SigmaKind};
use crate::rng::{stream_id, RngStream, StreamPurpose};
use crate::samplers::{gumbel_top_n, plan_steps, run_plan, sample_rng, StepOp};
use crate::types::{Sequence, Token, Vocab};
use crate::{Chain, Dist, Result};
use serde::Serialize;
use std::collections::BTreeMap;

/// Default cap on enumeration work, counted in expanded branch leaves.
pub const DEFAULT_LEAF_BUDGET: f64 = 1e7;

/// An exact distribution over sequences, keyed canonically by token ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExactDistribution {
    pub mass: BTreeMap<Sequence, f64>,
}

impl ExactDistribution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, seq: Sequence, p: f64) {
        if p > 0.0 {
            *self.mass.entry(seq).or_insert(0.0) += p;
        }
    }

    pub fn prob(&self, seq: &Sequence) -> f64 {
        self.mass.get(seq).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.mass.values().sum()
    }

    pub fn support_size(&self) -> usize {
        self.mass.len()
    }

    /// 0.5 * L1 over the union of supports.
    pub fn tv(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        for (seq, &p) in &self.mass {
            acc += (p - other.prob(seq)).abs();
        }
        for (seq, &q) in &other.mass {
            if !self.mass.contains_key(seq) {
                acc += q;
            }
        }
        0.5 * acc
    }
}

pub fn tv_distance(p: &ExactDistribution, q: &ExactDistribution) -> f64 {
    p.tv(q)
}

/// Exact distribution of length-`len` sequences under a Markov chain.
pub fn chain_distribution(chain: &Chain, len: usize) -> Result<ExactDistribution> {
    let v = chain.size();
    let leaves = (v as f64).powi(len as i32);
    if leaves > DEFAULT_LEAF_BUDGET {
        return Err(Error::Budget {
            leaves,
            budget: DEFAULT_LEAF_BUDGET,
        });
    }
    let mut dist = ExactDistribution::new();
    let mut tokens = vec![0 as Token; len];
    loop {
        let mut p = chain.pi()[tokens[0] as usize];
        for w in tokens.windows(2) {
            p *= chain.row(w[0] as usize)[w[1] as usize];
        }
        dist.add(Sequence::new(tokens.clone()), p);
        // Odometer over V^len.
        let mut i = len;
        loop {
            if i == 0 {
                return Ok(dist);
            }
            i -= 1;
            tokens[i] += 1;
            if (tokens[i] as usize) < v {
                break;
            }
            tokens[i] = 0;
        }
    }
}

struct Budgeter {
    used: f64,
    budget: f64,
}

impl Budgeter {
    fn spend(&mut self, n: f64) -> Result<()> {
        self.used += n;
        if self.used > self.budget {
            Err(Error::Budget {
                leaves: self.used,
                budget: self.budget,
            })
        } else {
            Ok(())
        }
    }
}

/// Nonzero entries of a distribution as (token, probability) branches.
fn branches(d: &Dist) -> Vec<(Token, f64)> {
    d.probs()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(v, &p)| (v as Token, p))
        .collect()
}

/// Expand a per-position product of branches into `sink`.
fn expand_product(
    per_position: &[Vec<(Token, f64)>],
    base: f64,
    budget: &mut Budgeter,
    sink: &mut BTreeMap<Vec<Token>, f64>,
) -> Result<()> {
    fn rec(
        per_position: &[Vec<(Token, f64)>],
        i: usize,
        prefix: &mut Vec<Token>,
        p: f64,
        budget: &mut Budgeter,
        sink: &mut BTreeMap<Vec<Token>, f64>,
    ) -> Result<()> {
        if i == per_position.len() {
            budget.spend(1.0)?;
            *sink.entry(prefix.clone()).or_insert(0.0) += p;
            return Ok(());
        }
        for &(tok, q) in &per_position[i] {
            prefix.push(tok);
            rec(per_position, i + 1, prefix, p * q, budget, sink)?;
            prefix.pop();
        }
        Ok(())
    }
    rec(per_position, 0, &mut Vec::new(), base, budget, sink)
}

/// Probability that Gumbel-Top-N selection with the given positive weights
/// returns exactly `set`: the sum over pick orders of the softmax chain
/// without replacement.
fn top_set_probability(weights: &[f64], set: &[usize]) -> f64 {
    let total: f64 = weights.iter().sum();
    fn rec(weights: &[f64], set: &[usize], used: &mut [bool], remaining: f64) -> f64 {
        if used.iter().all(|&u| u) {
            return 1.0;
        }
        let mut acc = 0.0;
        for (si, &i) in set.iter().enumerate() {
            if !used[si] {
                used[si] = true;
                acc += weights[i] / remaining * rec(weights, set, used, remaining - weights[i]);
                used[si] = false;
            }
        }
        acc
    }
    rec(weights, set, &mut vec![false; set.len()], total)
}

fn for_each_combination(m: usize, n: usize, f: &mut impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    fn rec(
        start: usize,
        m: usize,
        n: usize,
        acc: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize]) -> Result<()>,
    ) -> Result<()> {
        if acc.len() == n {
            return f(acc);
        }
        for i in start..m {
            acc.push(i);
            rec(i + 1, m, n, acc, f)?;
            acc.pop();
        }
        Ok(())
    }
    rec(0, m, n, &mut Vec::new(), f)
}

/// Walk `plan` symbolically and return the exact distribution over final
/// sequences. Mirrors `run_plan` branch-for-branch.
pub fn enumerate_sampler(
    cfg: &RunConfig,
    plan: &[StepOp],
    denoiser: &dyn Denoiser,
    predictor: Option<&ErrorPredictor>,
    truth: Option<&Sequence>,
    budget: f64,
) -> Result<ExactDistribution> {
    let vocab = cfg.vocab;
    let len = cfg.sequence_length;
    let state_bound = (vocab.n_entries() as f64).powi(len as i32);
    if state_bound > budget {
        return Err(Error::Budget {
            leaves: state_bound,
            budget,
        });
    }
    let mut budgeter = Budgeter { used: 0.0, budget };
    let clamps = cfg.clamp_set();

    let mut start = Sequence::masked(len, &vocab);
    for (&pos, &tok) in &clamps {
        start.tokens[pos] = tok;
    }
    let mut frontier: BTreeMap<Vec<Token>, f64> = BTreeMap::new();
    frontier.insert(start.tokens, 1.0);

    for op in plan {
        let mut next: BTreeMap<Vec<Token>, f64> = BTreeMap::new();
        for (tokens, &mass) in &frontier {
            let x = Sequence::new(tokens.clone());
            let out = denoiser.denoise(&x, op_time(op))?;
            out.validate(&x, &vocab)?;
            match *op {
                StepOp::Kernel {
                    alpha_t,
                    alpha_s,
                    sigma,
                    ..
                } => {
                    let mut per_position = Vec::with_capacity(len);
                    for i in 0..len {
                        if clamps.contains_key(&i) {
                            per_position.push(vec![(x.tokens[i], 1.0)]);
                            continue;
                        }
                        let d = remdm_step_dist(
                            x.tokens[i],
                            alpha_t,
                            alpha_s,
                            sigma,
                            &out.per_position[i],
                            &vocab,
                        )?;
                        per_position.push(branches(&d));
                    }
                    expand_product(&per_position, mass, &mut budgeter, &mut next)?;
                }
                StepOp::Star { alpha_s, last, .. } => {
                    // The committed candidate integrates out per position:
                    // re-corruption of an independent commit is the mixture
                    // alpha_s * committed + (1 - alpha_s) * mask.
                    let mut per_position = Vec::with_capacity(len);
                    for i in 0..len {
                        let tok = x.tokens[i];
                        if clamps.contains_key(&i) {
                            per_position.push(vec![(tok, 1.0)]);
                        } else if vocab.is_real(tok) {
                            if last {
                                per_position.push(vec![(tok, 1.0)]);
                            } else {
                                per_position
                                    .push(vec![(tok, alpha_s), (vocab.mask_id(), 1.0 - alpha_s)]);
                            }
                        } else {
                            let committed = out.per_position[i].tempered(cfg.tau_diffuse)?;
                            let mut opts: Vec<(Token, f64)> = branches(&committed);
                            if !last {
                                for o in &mut opts {
                                    o.1 *= alpha_s;
                                }
                                if 1.0 - alpha_s > 0.0 {
                                    opts.push((vocab.mask_id(), 1.0 - alpha_s));
                                }
                            }
                            per_position.push(opts);
                        }
                    }
                    expand_product(&per_position, mass, &mut budgeter, &mut next)?;
                }
                StepOp::Gstar { alpha_s, .. } => {
                    let predictor = predictor.ok_or_else(|| {
                        Error::Config("guided sampler needs an error predictor".into())
                    })?;
                    let mut cand_branches = Vec::with_capacity(len);
                    for i in 0..len {
                        let tok = x.tokens[i];
                        if vocab.is_real(tok) {
                            cand_branches.push(vec![(tok, 1.0)]);
                        } else {
                            cand_branches
                                .push(branches(&out.per_position[i].tempered(cfg.tau_diffuse)?));
                        }
                    }
                    let mut cands: BTreeMap<Vec<Token>, f64> = BTreeMap::new();
                    expand_product(&cand_branches, mass, &mut budgeter, &mut cands)?;
                    let fresh: Vec<bool> =
                        x.tokens.iter().map(|&tok| vocab.is_mask(tok)).collect();
                    let eligible: Vec<usize> =
                        (0..len).filter(|i| !clamps.contains_key(i)).collect();
                    let n = (((1.0 - alpha_s) * eligible.len() as f64).round() as usize)
                        .min(eligible.len());
                    for (cand_tokens, q) in cands {
                        let cand = Sequence::new(cand_tokens);
                        if n == 0 {
                            budgeter.spend(1.0)?;
                            *next.entry(cand.tokens).or_insert(0.0) += q;
                            continue;
                        }
                        let logits = predictor.predict_logits(&cand, &out, &fresh, truth, &vocab)?;
                        let picked: Vec<f64> = eligible.iter().map(|&i| logits[i]).collect();
                        if cfg.tau_remask == 0.0 {
                            let mut dummy = RngStream::seeded(0, 0);
                            let rel = gumbel_top_n(&picked, 0.0, n, &mut dummy)?;
                            let mut child = cand.tokens.clone();
                            for r in rel {
                                child[eligible[r]] = vocab.mask_id();
                            }
                            budgeter.spend(1.0)?;
                            *next.entry(child).or_insert(0.0) += q;
                        } else {
                            let lmax = picked.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let weights: Vec<f64> = picked
                                .iter()
                                .map(|&l| ((l - lmax) / cfg.tau_remask).exp())
                                .collect();
                            for_each_combination(eligible.len(), n, &mut |set| {
                                let p_set = top_set_probability(&weights, set);
                                let mut child = cand.tokens.clone();
                                for &r in set {
                                    child[eligible[r]] = vocab.mask_id();
                                }
                                budgeter.spend(1.0)?;
                                *next.entry(child).or_insert(0.0) += q * p_set;
                                Ok(())
                            })?;
                        }
                    }
                }
                StepOp::UnmaskOne { .. } => {
                    let masked = x.masked_positions(&vocab);
                    if masked.is_empty() {
                        budgeter.spend(1.0)?;
                        *next.entry(x.tokens.clone()).or_insert(0.0) += mass;
                    } else {
                        let pick = 1.0 / masked.len() as f64;
                        for &j in &masked {
                            for (tok, p) in branches(&out.per_position[j]) {
                                let mut child = x.tokens.clone();
                                child[j] = tok;
                                budgeter.spend(1.0)?;
                                *next.entry(child).or_insert(0.0) += mass * pick * p;
                            }
                        }
                    }
                }
            }
        }
        frontier = next;
    }

    let mut dist = ExactDistribution::new();
    for (tokens, p) in frontier {
        dist.add(Sequence::new(tokens), p);
    }
    let total = dist.total();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized { sum: total });
    }
    Ok(dist)
}

fn op_time(op: &StepOp) -> f64 {
    match *op {
        StepOp::Kernel { t, .. }
        | StepOp::Star { t, .. }
        | StepOp::Gstar { t, .. }
        | StepOp::UnmaskOne { t } => t,
    }
}

/// Enumerate a config's own plan under the default budget.
pub fn enumerate_config(
    cfg: &RunConfig,
    denoiser: &dyn Denoiser,
    predictor: Option<&ErrorPredictor>,
    truth: Option<&Sequence>,
) -> Result<ExactDistribution> {
    let plan = plan_steps(cfg)?;
    enumerate_sampler(cfg, &plan, denoiser, predictor, truth, DEFAULT_LEAF_BUDGET)
}

/// Empirical distribution over `runs` seeded trajectories of `plan`.
pub fn empirical_distribution(
    cfg: &RunConfig,
    plan: &[StepOp],
    denoiser: &dyn Denoiser,
    predictor: Option<&ErrorPredictor>,
    truth: Option<&Sequence>,
    runs: u64,
) -> Result<ExactDistribution> {
    let w = 1.0 / runs as f64;
    let mut dist = ExactDistribution::new();
    for i in 0..runs {
        let mut rng = sample_rng(cfg, i);
        let traj = run_plan(cfg, plan, denoiser, predictor, truth, &mut rng)?;
        dist.add(traj.final_state().clone(), w);
    }
    Ok(dist)
}

/// Term-by-term KL between the two per-position posteriors of a star step —
/// `Cat(alpha_s * delta_k + (1 - alpha_s) * mask)` against the same mixture
/// around `phat` — paired with the closed form `-alpha_s * ln phat[k]`.
/// Returns `(kl, formula)`; both are `+inf` when `phat[k] = 0`.
pub fn check_kl_closed_form(alpha_s: f64, k: Token, phat: &Dist, vocab: &Vocab) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&alpha_s) {
        return Err(Error::Range(format!(
            "alpha_s = {alpha_s} outside [0, 1]"
        )));
    }
    if !vocab.is_real(k) {
        return Err(Error::Range(format!("true token {k} is not a real token")));
    }
    let mask_mass = phat.get(vocab.mask_id() as usize);
    if mask_mass != 0.0 {
        return Err(Error::MaskMass { mass: mask_mass });
    }
    let n = vocab.n_entries();
    let mut q = vec![0.0; n];
    let mut p = vec![0.0; n];
    q[k as usize] = alpha_s;
    q[vocab.mask_id() as usize] = 1.0 - alpha_s;
    for (v, x) in p.iter_mut().enumerate() {
        *x = alpha_s * phat.get(v);
    }
    p[vocab.mask_id() as usize] += 1.0 - alpha_s;
    let mut kl = 0.0;
    for (qv, pv) in q.iter().zip(&p) {
        if *qv > 0.0 {
            if *pv == 0.0 {
                kl = f64::INFINITY;
                break;
            }
            kl += qv * (qv / pv).ln();
        }
    }
    let formula = if alpha_s == 0.0 {
        0.0
    } else if phat.get(k as usize) == 0.0 {
        f64::INFINITY
    } else {
        -alpha_s * phat.get(k as usize).ln()
    };
    Ok((kl, formula))
}

/// Per-step objective weights of the star-shaped bound on the uniform grid:
/// the reconstruction step has weight 1, step `t > 1` has weight
/// `alpha((t-1)/T)`.
pub fn vlb_weights(kind: ScheduleKind, total_steps: usize) -> Result<Vec<f64>> {
    let sched = crate::noise::NoiseSchedule::new(kind, total_steps)?;
    let mut w = Vec::with_capacity(total_steps);
    w.push(1.0);
    for t in 2..=total_steps {
        w.push(sched.alpha(sched.grid_t(t - 1))?);
    }
    Ok(w)
}

/// 2-state chain that stays put with probability 0.9.
pub fn chain_two_sticky() -> Chain {
    MarkovChain::new(
        vec![0.5, 0.5],
        vec![vec![0.9, 0.1], vec![0.1, 0.9]],
    )
    .expect("fixture chain is stochastic")
}

/// 3-state chain with a mild self-preference and asymmetric drift.
pub fn chain_three_drift() -> Chain {
    MarkovChain::new(
        vec![0.5, 0.3, 0.2],
        vec![
            vec![0.6, 0.3, 0.1],
            vec![0.2, 0.6, 0.2],
            vec![0.1, 0.3, 0.6],
        ],
    )
    .expect("fixture chain is stochastic")
}

/// 4-state chain that mostly cycles 0 -> 1 -> 2 -> 3 -> 0; its strong local
/// structure gives error predictors something to learn.
pub fn chain_four_cycle() -> Chain {
    let mut rows = Vec::new();
    for i in 0..4 {
        let mut row = vec![0.05; 4];
        row[(i + 1) % 4] = 0.85;
        rows.push(row);
    }
    MarkovChain::new(vec![0.25; 4], rows).expect("fixture chain is stochastic")
}

/// One row of the verification battery.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub instance: String,
    pub metric: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckReport {
    fn at_most(check: &str, instance: &str, metric: &str, value: f64, tolerance: f64) -> Self {
        CheckReport {
            check: check.into(),
            instance: instance.into(),
            metric: metric.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }

    fn exceeds(check: &str, instance: &str, metric: &str, value: f64, tolerance: f64) -> Self {
        CheckReport {
            check: check.into(),
            instance: instance.into(),
            metric: metric.into(),
            value,
            tolerance,
            pass: value > tolerance,
        }
    }
}

pub fn all_pass(rows: &[CheckReport]) -> bool {
    rows.iter().all(|r| r.pass)
}

fn tiny_cfg(family: SamplerFamily, vocab_size: usize, seed: u64) -> RunConfig {
    RunConfig {
        vocab: Vocab::new(vocab_size).expect("tiny vocab"),
        sequence_length: 2,
        total_steps: 2,
        schedule: ScheduleKind::Linear,
        sampler: family,
        t_on: 0.3,
        eta: 0.0,
        sigma: SigmaKind::Off,
        alpha_on: None,
        loop_fraction: 0.10,
        tau_remask: 8.0,
        tau_diffuse: 1.0,
        n_remask: None,
        base_seed: seed,
        clamped: Vec::new(),
    }
}

/// Star plan rewritten as remasking-kernel steps at `sigma_scale * (1 - alpha_s)`.
/// `sigma_scale = 1` is the exact-equivalence setting; anything else is a
/// deliberate mutation that must produce a visible residual.
fn star_as_remdm_plan(cfg: &RunConfig, sigma_scale: f64) -> Result<Vec<StepOp>> {
    let sched = cfg.noise_schedule()?;
    let mut plan = Vec::new();
    for k in (1..=cfg.total_steps).rev() {
        let t = sched.grid_t(k);
        let alpha_t = sched.alpha(t)?;
        let alpha_s = sched.alpha(sched.grid_t(k - 1))?;
        plan.push(StepOp::Kernel {
            t,
            alpha_t,
            alpha_s,
            sigma: sigma_scale * (1.0 - alpha_s),
        });
    }
    Ok(plan)
}

/// Enumerated TV between the star family and its remasking-kernel rewrite.
/// `steps > 2` is needed for mutations to be visible: with two steps the
/// first has `alpha_t = 0` and the last has `sigma = 0`, so the scale never
/// multiplies a nonzero term.
pub fn star_vs_remdm_tv(chain: &Chain, steps: usize, sigma_scale: f64) -> Result<f64> {
    let cfg = RunConfig {
        total_steps: steps,
        ..tiny_cfg(SamplerFamily::Star, chain.size(), 7)
    };
    let den = MarkovOracleDenoiser::new(chain.clone());
    let star = enumerate_config(&cfg, &den, None, None)?;
    let plan = star_as_remdm_plan(&cfg, sigma_scale)?;
    let remdm = enumerate_sampler(&cfg, &plan, &den, None, None, DEFAULT_LEAF_BUDGET)?;
    Ok(star.tv(&remdm))
}

fn kernel_identity_rows(rows: &mut Vec<CheckReport>) {
    let v = Vocab::new(2).expect("vocab");
    let delta = |k: usize| {
        let mut p = vec![0.0; v.n_entries()];
        p[k] = 1.0;
        Dist::new(p).expect("point mass")
    };
    let mut worst = 0.0f64;
    for i in 1..=10 {
        for j in 1..=10 {
            let alpha_t = i as f64 / 11.0;
            let alpha_s = alpha_t + (1.0 - alpha_t) * j as f64 / 10.0;
            let sigma = 1.0 - alpha_s;
            for cand in [0 as Token, 1] {
                let star = crate::noise::star_step_dist(alpha_s, cand, &v);
                let masked =
                    remdm_step_dist(v.mask_id(), alpha_t, alpha_s, sigma, &delta(cand as usize), &v)
                        .expect("admissible sigma");
                let unmasked =
                    remdm_step_dist(cand, alpha_t, alpha_s, sigma, &delta(cand as usize), &v)
                        .expect("admissible sigma");
                for e in 0..v.n_entries() {
                    worst = worst
                        .max((star.get(e) - masked.get(e)).abs())
                        .max((star.get(e) - unmasked.get(e)).abs());
                }
            }
        }
    }
    rows.push(CheckReport::at_most(
        "star-remdm-kernel-identity",
        "100-pair-grid",
        "max_abs_diff",
        worst,
        1e-15,
    ));
}

fn star_remdm_enumeration_rows(rows: &mut Vec<CheckReport>) -> Result<()> {
    for (name, chain) in [
        ("v2-l2-t2", chain_two_sticky()),
        ("v3-l2-t2", chain_three_drift()),
    ] {
        let tv = star_vs_remdm_tv(&chain, 2, 1.0)?;
        rows.push(CheckReport::at_most(
            "star-remdm-exact",
            name,
            "tv",
            tv,
            1e-12,
        ));
    }
    Ok(())
}

fn sigma_zero_rows(rows: &mut Vec<CheckReport>) -> Result<()> {
    let v = Vocab::new(3).expect("vocab");
    let mut check = RngStream::seeded(17, stream_id(StreamPurpose::Check, 0));
    let mut worst = 0.0f64;
    for i in 0..10 {
        for j in 0..10 {
            let alpha_t = i as f64 / 10.0;
            let alpha_s = alpha_t + (1.0 - alpha_t) * (j as f64 + 1.0) / 10.0;
            let raw: Vec<f64> = (0..3).map(|_| check.uniform() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let mut probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let spill: f64 = 1.0 - probs.iter().sum::<f64>();
            probs[0] += spill;
            probs.push(0.0);
            let phat = Dist::new(probs).expect("normalized");
            if alpha_t < 1.0 {
                let a = mdlm_step_dist(v.mask_id(), alpha_t, alpha_s, &phat, &v)?;
                let b = remdm_step_dist(v.mask_id(), alpha_t, alpha_s, 0.0, &phat, &v)?;
                for e in 0..v.n_entries() {
                    worst = worst.max((a.get(e) - b.get(e)).abs());
                }
            }
            let mut carry = vec![0.0; v.n_entries()];
            carry[1] = 1.0;
            let carry = Dist::new(carry).expect("point mass");
            let a = mdlm_step_dist(1, alpha_t, alpha_s, &carry, &v)?;
            let b = remdm_step_dist(1, alpha_t, alpha_s, 0.0, &carry, &v)?;
            for e in 0..v.n_entries() {
                worst = worst.max((a.get(e) - b.get(e)).abs());
            }
        }
    }
    rows.push(CheckReport::at_most(
        "sigma-zero-degeneration",
        "kernel-grid",
        "max_abs_diff",
        worst,
        0.0,
    ));

    let mdlm_cfg = RunConfig {
        sequence_length: 12,
        total_steps: 8,
        ..tiny_cfg(SamplerFamily::Mdlm, 2, 11)
    };
    let remdm_cfg = RunConfig {
        sampler: SamplerFamily::Remdm,
        sigma: SigmaKind::Cap,
        eta: 0.0,
        ..mdlm_cfg.clone()
    };
    let den = MarkovOracleDenoiser::new(chain_two_sticky());
    let mut mismatches = 0usize;
    for idx in 0..50 {
        let a = run_plan(
            &mdlm_cfg,
            &plan_steps(&mdlm_cfg)?,
            &den,
            None,
            None,
            &mut sample_rng(&mdlm_cfg, idx),
        )?;
        let b = run_plan(
            &remdm_cfg,
            &plan_steps(&remdm_cfg)?,
            &den,
            None,
            None,
            &mut sample_rng(&remdm_cfg, idx),
        )?;
        if a != b {
            mismatches += 1;
        }
    }
    rows.push(CheckReport::at_most(
        "sigma-zero-degeneration",
        "same-seed-trajectories-50",
        "mismatched_runs",
        mismatches as f64,
        0.0,
    ));
    Ok(())
}

fn kl_closed_form_rows(rows: &mut Vec<CheckReport>) -> Result<()> {
    let mut check = RngStream::seeded(23, stream_id(StreamPurpose::Check, 1));
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let size = 2 + trial % 3;
        let v = Vocab::new(size)?;
        let alpha_s = check.uniform();
        let raw: Vec<f64> = (0..size).map(|_| check.uniform() + 1e-6).collect();
        let total: f64 = raw.iter().sum();
        let mut probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let spill: f64 = 1.0 - probs.iter().sum::<f64>();
        probs[0] += spill;
        probs.push(0.0);
        let phat = Dist::new(probs)?;
        let k = check.uniform_index(size) as Token;
        let (kl, formula) = check_kl_closed_form(alpha_s, k, &phat, &v)?;
        worst = worst.max((kl - formula).abs());
    }
    rows.push(CheckReport::at_most(
        "kl-closed-form",
        "1000-random-triples",
        "max_abs_residual",
        worst,
        1e-10,
    ));

    let v = Vocab::new(2)?;
    let point = Dist::new(vec![1.0, 0.0, 0.0])?;
    let (kl, formula) = check_kl_closed_form(0.6, 0, &point, &v)?;
    rows.push(CheckReport::at_most(
        "kl-closed-form",
        "point-mass-prediction",
        "max_abs_value",
        kl.abs().max(formula.abs()),
        0.0,
    ));
    let spread = Dist::new(vec![0.7, 0.3, 0.0])?;
    let (kl, formula) = check_kl_closed_form(0.0, 1, &spread, &v)?;
    rows.push(CheckReport::at_most(
        "kl-closed-form",
        "alpha_s-zero",
        "max_abs_value",
        kl.abs().max(formula.abs()),
        0.0,
    ));
    let zeroed = Dist::new(vec![1.0, 0.0, 0.0])?;
    let (kl, formula) = check_kl_closed_form(0.5, 1, &zeroed, &v)?;
    let sentinel_ok = kl.is_infinite() && formula.is_infinite();
    rows.push(CheckReport::at_most(
        "kl-closed-form",
        "zero-probability-token",
        "sentinel_disagreements",
        if sentinel_ok { 0.0 } else { 1.0 },
        0.0,
    ));
    Ok(())
}

fn chain_rule_rows(rows: &mut Vec<CheckReport>) -> Result<()> {
    let chain = chain_two_sticky();
    let cfg = RunConfig {
        sequence_length: 3,
        total_steps: 3,
        ..tiny_cfg(SamplerFamily::Mdlm, 2, 13)
    };
    let plan = vec![
        StepOp::UnmaskOne { t: 1.0 },
        StepOp::UnmaskOne { t: 2.0 / 3.0 },
        StepOp::UnmaskOne { t: 1.0 / 3.0 },
    ];
    let den = MarkovOracleDenoiser::new(chain.clone());
    let got = enumerate_sampler(&cfg, &plan, &den, None, None, DEFAULT_LEAF_BUDGET)?;
    let want = chain_distribution(&chain, 3)?;
    rows.push(CheckReport::at_most(
        "chain-rule-exactness",
        "v2-l3-t3-unmask-one",
        "tv",
        got.tv(&want),
        1e-9,
    ));
    rows.push(CheckReport::at_most(
        "enumeration-mass",
        "v2-l3-t3-unmask-one",
        "abs_total_minus_one",
        (got.total() - 1.0).abs(),
        1e-10,
    ));
    Ok(())
}

/// Per-family tiny configs used by the enumeration-vs-simulation check.
pub fn battery_family_configs() -> Vec<RunConfig> {
    vec![
        tiny_cfg(SamplerFamily::Mdlm, 2, 101),
        RunConfig {
            sigma: SigmaKind::Cap,
            eta: 0.08,
            ..tiny_cfg(SamplerFamily::Remdm, 2, 102)
        },
        tiny_cfg(SamplerFamily::Star, 2, 103),
        RunConfig {
            t_on: 0.5,
            ..tiny_cfg(SamplerFamily::Hybrid, 2, 104)
        },
        RunConfig {
            t_on: 1.0,
            tau_remask: 1.0,
            ..tiny_cfg(SamplerFamily::Gstar, 2, 105)
        },
        RunConfig {
            loop_fraction: 0.5,
            alpha_on: Some(0.5),
            ..tiny_cfg(SamplerFamily::Loop, 2, 106)
        },
        RunConfig {
            loop_fraction: 0.5,
            alpha_on: Some(0.5),
            tau_remask: 1.0,
            ..tiny_cfg(SamplerFamily::GstarLoop, 2, 107)
        },
    ]
}

fn enumeration_vs_simulation_rows(rows: &mut Vec<CheckReport>, runs: u64) -> Result<()> {
    let den = MarkovOracleDenoiser::new(chain_two_sticky());
    let entropy = ErrorPredictor::Entropy;
    for cfg in battery_family_configs() {
        let predictor = cfg.sampler.is_guided().then_some(&entropy);
        let plan = plan_steps(&cfg)?;
        let exact = enumerate_sampler(&cfg, &plan, &den, predictor, None, DEFAULT_LEAF_BUDGET)?;
        let empirical = empirical_distribution(&cfg, &plan, &den, predictor, None, runs)?;
        let family = serde_json::to_value(cfg.sampler)?
            .as_str()
            .expect("family serializes to a string")
            .to_string();
        rows.push(CheckReport::at_most(
            "enumeration-vs-simulation",
            &family,
            "tv",
            exact.tv(&empirical),
            0.01,
        ));
    }
    Ok(())
}

fn hybrid_endpoint_rows(rows: &mut Vec<CheckReport>) -> Result<()> {
    let den = MarkovOracleDenoiser::new(chain_two_sticky());
    let mdlm = enumerate_config(&tiny_cfg(SamplerFamily::Mdlm, 2, 21), &den, None, None)?;
    let star = enumerate_config(&tiny_cfg(SamplerFamily::Star, 2, 22), &den, None, None)?;
    let h0 = enumerate_config(
        &RunConfig {
            t_on: 0.0,
            ..tiny_cfg(SamplerFamily::Hybrid, 2, 23)
        },
        &den,
        None,
        None,
    )?;
    let h1 = enumerate_config(
        &RunConfig {
            t_on: 1.0,
            ..tiny_cfg(SamplerFamily::Hybrid, 2, 24)
        },
        &den,
        None,
        None,
    )?;
    rows.push(CheckReport::at_most(
        "hybrid-endpoints",
        "t_on-0-vs-plain",
        "tv",
        h0.tv(&mdlm),
        1e-12,
    ));
    rows.push(CheckReport::at_most(
        "hybrid-endpoints",
        "t_on-1-vs-star",
        "tv",
        h1.tv(&star),
        1e-12,
    ));
    Ok(())
}

fn mutation_rows(rows: &mut Vec<CheckReport>) -> Result<()> {
    let tv = star_vs_remdm_tv(&chain_two_sticky(), 3, 0.9)?;
    rows.push(CheckReport::exceeds(
        "mutation-guard",
        "sigma-scaled-0.9",
        "tv",
        tv,
        1e-6,
    ));
    Ok(())
}

fn forward_marginal_rows(rows: &mut Vec<CheckReport>) -> Result<()> {
    let chain = chain_two_sticky();
    let v = chain.vocab();
    let mut data_rng = RngStream::seeded(31, stream_id(StreamPurpose::Data, 0));
    let x0 = chain.sample(10_000, &mut data_rng);
    let mut check = RngStream::seeded(31, stream_id(StreamPurpose::Check, 2));
    let x_t = corrupt(&x0, 0.5, &v, &Default::default(), &mut check);
    let frac = x_t.count_masked(&v) as f64 / 10_000.0;
    rows.push(CheckReport::at_most(
        "forward-marginal",
        "alpha-0.5-l10000",
        "abs_dev_masked_fraction",
        (frac - 0.5).abs(),
        0.02,
    ));
    Ok(())
}

fn gumbel_rows(rows: &mut Vec<CheckReport>) -> Result<()> {
    let mut check = RngStream::seeded(37, stream_id(StreamPurpose::Check, 3));
    let mut mismatches = 0usize;
    for _ in 0..1000 {
        let len = 1 + check.uniform_index(8);
        // Coarse levels make ties frequent, so the tie-break rule is hit.
        let logits: Vec<f64> = (0..len)
            .map(|_| 0.5 * check.uniform_index(5) as f64)
            .collect();
        let n = check.uniform_index(len + 1);
        let got = gumbel_top_n(&logits, 0.0, n, &mut check)?;
        let mut order: Vec<usize> = (0..len).collect();
        order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        let mut want = order[..n].to_vec();
        want.sort_unstable();
        if got != want {
            mismatches += 1;
        }
    }
    rows.push(CheckReport::at_most(
        "gumbel-top-n",
        "tau-0-determinism-1000",
        "mismatches",
        mismatches as f64,
        0.0,
    ));

    let mut first = 0usize;
    let n = 100_000;
    for _ in 0..n {
        if gumbel_top_n(&[1.0, 0.0], 1.0, 1, &mut check)?[0] == 0 {
            first += 1;
        }
    }
    let freq = first as f64 / n as f64;
    let want = 1.0f64.exp() / (1.0 + 1.0f64.exp());
    rows.push(CheckReport::at_most(
        "gumbel-top-n",
        "tau-1-softmax-frequency",
        "abs_dev",
        (freq - want).abs(),
        0.005,
    ));
    Ok(())
}

fn vlb_rows(rows: &mut Vec<CheckReport>) -> Result<()> {
    let got = vlb_weights(ScheduleKind::Linear, 4)?;
    let want = [1.0, 0.75, 0.5, 0.25];
    let worst = got
        .iter()
        .zip(want.iter())
        .map(|(g, w)| (g - w).abs())
        .fold(0.0f64, f64::max);
    rows.push(CheckReport::at_most(
        "vlb-weights",
        "linear-t4",
        "max_abs_diff",
        worst,
        1e-15,
    ));
    let single = vlb_weights(ScheduleKind::Linear, 1)?;
    rows.push(CheckReport::at_most(
        "vlb-weights",
        "t1-reconstruction-only",
        "max_abs_diff",
        (single[0] - 1.0).abs().max((single.len() as f64) - 1.0),
        0.0,
    ));
    Ok(())
}

/// The full deterministic check battery. `simulation_runs` scales the
/// enumeration-vs-simulation sample count (200 000 is the reference
/// setting).
pub fn run_battery(simulation_runs: u64) -> Result<Vec<CheckReport>> {
    let mut rows = Vec::new();
    kernel_identity_rows(&mut rows);
    star_remdm_enumeration_rows(&mut rows)?;
    sigma_zero_rows(&mut rows)?;
    kl_closed_form_rows(&mut rows)?;
    chain_rule_rows(&mut rows)?;
    enumeration_vs_simulation_rows(&mut rows, simulation_runs)?;
    hybrid_endpoint_rows(&mut rows)?;
    mutation_rows(&mut rows)?;
    forward_marginal_rows(&mut rows)?;
    gumbel_rows(&mut rows)?;
    vlb_rows(&mut rows)?;
    Ok(rows)
}

pub const BATTERY_REFERENCE_RUNS: u64 = 200_000;
