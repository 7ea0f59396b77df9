//! Run configuration: the single serialized description of a sampling run.
//!
//! A `RunConfig` JSON object is the reproducibility contract: two runs with
//! equal configs (and equal checkpoints) must produce byte-identical
//! outputs. Unknown keys are rejected rather than ignored so stale or
//! misspelled fields cannot silently change an experiment.

use crate::error::Error;
use crate::noise::{NoiseSchedule, ScheduleKind, SigmaKind};
use crate::types::{Token, Vocab};
use crate::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Sampler families. `mdlm` and `remdm` are kernel-form ancestral samplers;
/// `star` commits a clean candidate each step and re-corrupts it; `hybrid`
/// switches from kernel to star steps below `t_on`; `gstar` replaces star's
/// independent re-corruption with guided remasking; the loop families run a
/// kernel draft, a constant-level refinement loop, and a kernel finish.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerFamily {
    Mdlm,
    Remdm,
    Star,
    Hybrid,
    Gstar,
    Loop,
    GstarLoop,
}

impl SamplerFamily {
    /// Families that need an error predictor to run.
    pub fn is_guided(&self) -> bool {
        matches!(self, SamplerFamily::Gstar | SamplerFamily::GstarLoop)
    }

    /// Families that use the constant-level refinement loop plan.
    pub fn is_loop(&self) -> bool {
        matches!(self, SamplerFamily::Loop | SamplerFamily::GstarLoop)
    }
}

fn default_t_on() -> f64 {
    0.3
}
fn default_loop_fraction() -> f64 {
    0.10
}
fn default_tau_remask() -> f64 {
    8.0
}
fn default_tau_diffuse() -> f64 {
    1.0
}

/// Everything a sampling run depends on, minus the checkpoints themselves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Real-symbol vocabulary size; serialized as the integer size.
    pub vocab: Vocab,
    pub sequence_length: usize,
    pub total_steps: usize,
    pub schedule: ScheduleKind,
    pub sampler: SamplerFamily,
    /// Kernel-to-star handover time for `hybrid` and `gstar`.
    #[serde(default = "default_t_on")]
    pub t_on: f64,
    /// Remasking budget parameter for `remdm` sigma schedules.
    #[serde(default)]
    pub eta: f64,
    /// Sigma schedule kind for `remdm`.
    #[serde(default)]
    pub sigma: SigmaKind,
    /// Survival level held during refinement loops. When absent it resolves
    /// from `n_remask` (as `1 - n_remask / sequence_length`), else to 0.9.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_on: Option<f64>,
    /// Fraction of `total_steps` spent in the refinement loop.
    #[serde(default = "default_loop_fraction")]
    pub loop_fraction: f64,
    /// Gumbel selection temperature for guided remasking.
    #[serde(default = "default_tau_remask")]
    pub tau_remask: f64,
    /// Candidate-commitment temperature for star-style steps.
    #[serde(default = "default_tau_diffuse")]
    pub tau_diffuse: f64,
    /// Target number of positions to remask per refinement step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_remask: Option<usize>,
    pub base_seed: u64,
    /// Prompt positions pinned to fixed tokens, as `[position, token]` pairs.
    #[serde(default)]
    pub clamped: Vec<(usize, Token)>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequence_length == 0 {
            return Err(Error::Config("sequence_length must be positive".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.t_on) {
            return Err(Error::Config(format!(
                "t_on must be in [0, 1], got {}",
                self.t_on
            )));
        }
        if self.eta.is_nan() || self.eta < 0.0 {
            return Err(Error::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        if let Some(a) = self.alpha_on {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Config(format!(
                    "alpha_on must be strictly inside (0, 1), got {a}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.loop_fraction) {
            return Err(Error::Config(format!(
                "loop_fraction must be in [0, 1], got {}",
                self.loop_fraction
            )));
        }
        if self.tau_remask.is_nan() || self.tau_remask < 0.0 {
            return Err(Error::Config(format!(
                "tau_remask must be >= 0, got {}",
                self.tau_remask
            )));
        }
        if self.tau_diffuse.is_nan() || self.tau_diffuse < 0.0 {
            return Err(Error::Config(format!(
                "tau_diffuse must be >= 0, got {}",
                self.tau_diffuse
            )));
        }
        if let Some(n) = self.n_remask {
            if n > self.sequence_length {
                return Err(Error::Config(format!(
                    "n_remask = {n} exceeds sequence_length = {}",
                    self.sequence_length
                )));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for &(pos, tok) in &self.clamped {
            if pos >= self.sequence_length {
                return Err(Error::Config(format!(
                    "clamp position {pos} outside sequence of length {}",
                    self.sequence_length
                )));
            }
            if !self.vocab.is_real(tok) {
                return Err(Error::Config(format!(
                    "clamp token {tok} is not a real symbol of a size-{} vocab",
                    self.vocab.size()
                )));
            }
            if !seen.insert(pos) {
                return Err(Error::Config(format!("duplicate clamp at position {pos}")));
            }
        }
        Ok(())
    }

    /// Loop survival level: explicit `alpha_on` wins, then the `n_remask`
    /// target, then 0.9.
    pub fn resolved_alpha_on(&self) -> f64 {
        if let Some(a) = self.alpha_on {
            return a;
        }
        if let Some(n) = self.n_remask {
            return 1.0 - n as f64 / self.sequence_length as f64;
        }
        0.9
    }

    /// Copy with `alpha_on` made explicit, for echoing into run directories.
    pub fn resolved(&self) -> RunConfig {
        let mut cfg = self.clone();
        cfg.alpha_on = Some(self.resolved_alpha_on());
        cfg
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.schedule, self.total_steps)
    }

    pub fn clamp_set(&self) -> std::collections::BTreeMap<usize, Token> {
        self.clamped.iter().copied().collect()
    }

    /// Content hash of the serialized config; names run directories.
    pub fn config_id(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }
}
