//! `sample`: compile a config from flags, run it, and persist the artifacts
//! under `out/<config_id>/`. The sweep drives the same helpers, so manual and
//! swept runs can never produce different numbers.

use crate::util::{
    create_dir, enum_name, load_chain, load_denoiser, load_predictor, parse_clamps, parse_family,
    parse_schedule, parse_sigma, usage, write_json, write_traj, TruthSource,
};
use anyhow::Result;
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use stardiff_core::config::{RunConfig, SamplerFamily};
use stardiff_core::corpus::{read_dataset, write_dataset};
use stardiff_core::denoiser::Denoiser;
use stardiff_core::error_predictor::ErrorPredictor;
use stardiff_core::noise::{ScheduleKind, SigmaKind};
use stardiff_core::samplers::{run_trajectory, sample_rng, LoopPlan, Trajectory};
use stardiff_core::types::Vocab;
use std::path::{Path, PathBuf};

/// Flags that compile into a [`RunConfig`]. Optional flags fall back to the
/// config schema's own defaults, so a flag-built config and a JSON-built one
/// can never disagree.
#[derive(Args, Clone)]
pub struct ConfigFlags {
    /// Sampler family: mdlm | remdm | star | hybrid | gstar | loop | gstar-loop
    #[arg(long, value_parser = parse_family)]
    pub family: SamplerFamily,
    /// Tokens per sequence
    #[arg(long)]
    pub length: usize,
    /// Reverse steps (swept grids may set this instead)
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_parser = parse_schedule, default_value = "linear")]
    pub schedule: ScheduleKind,
    /// Kernel-to-star handover time (hybrid, gstar)
    #[arg(long)]
    pub t_on: Option<f64>,
    /// Remasking budget (remdm)
    #[arg(long)]
    pub eta: Option<f64>,
    /// Budget schedule: off | cap | rescale | loopwindow (remdm)
    #[arg(long, value_parser = parse_sigma)]
    pub sigma: Option<SigmaKind>,
    /// Loop survival level (loop families; also remdm --sigma loopwindow)
    #[arg(long)]
    pub alpha_on: Option<f64>,
    /// Fraction of steps spent in the refinement loop
    #[arg(long)]
    pub loop_fraction: Option<f64>,
    /// Gumbel selection temperature (guided families)
    #[arg(long)]
    pub tau_remask: Option<f64>,
    /// Candidate-commitment temperature (star-style families)
    #[arg(long)]
    pub tau_diffuse: Option<f64>,
    /// Remask-count target per refinement step
    #[arg(long)]
    pub n_remask: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    /// Pin positions to prompt tokens: "START:END=id,id,..." (repeatable)
    #[arg(long = "clamp")]
    pub clamps: Vec<String>,
}

/// Flags naming the run's inputs, shared by `sample` and `sweep`.
#[derive(Args, Clone)]
pub struct RunFlags {
    /// Denoiser checkpoint; fixes the vocabulary
    #[arg(long)]
    pub denoiser: PathBuf,
    /// Predictor checkpoint path, or "entropy" / "oracle" (guided families)
    #[arg(long)]
    pub predictor: Option<String>,
    /// Chain JSON the oracle predictor draws per-sample truths from
    #[arg(long)]
    pub truth_chain: Option<PathBuf>,
    /// Dataset whose row i is the truth for sample i (oracle predictor)
    #[arg(long)]
    pub truth_data: Option<PathBuf>,
    /// Samples to draw
    #[arg(long, default_value_t = 16)]
    pub count: usize,
}

#[derive(Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub cfg: ConfigFlags,
    #[command(flatten)]
    pub run: RunFlags,
    /// Also dump per-step states, candidates, and remask sets
    #[arg(long)]
    pub dump_traj: bool,
    /// Parent directory; the run lands in <out>/<config_id>/
    #[arg(long)]
    pub out: PathBuf,
}

/// Flag-compatibility table: each tuning flag belongs to the families that
/// read it, and naming it anywhere else is a usage error, not a silent no-op.
fn check_flag_conflicts(flags: &ConfigFlags) -> Result<()> {
    let fam = flags.family;
    let name = enum_name(&fam);
    if flags.t_on.is_some() && !matches!(fam, SamplerFamily::Hybrid | SamplerFamily::Gstar) {
        return Err(usage(format!(
            "--t-on applies to the hybrid and gstar families, not {name}"
        )));
    }
    if flags.eta.is_some() && fam != SamplerFamily::Remdm {
        return Err(usage(format!("--eta applies to the remdm family, not {name}")));
    }
    if flags.sigma.is_some() && fam != SamplerFamily::Remdm {
        return Err(usage(format!(
            "--sigma applies to the remdm family, not {name}"
        )));
    }
    let loops = fam.is_loop() || flags.sigma == Some(SigmaKind::Loopwindow);
    for (flag, given) in [
        ("--alpha-on", flags.alpha_on.is_some()),
        ("--loop-fraction", flags.loop_fraction.is_some()),
        ("--n-remask", flags.n_remask.is_some()),
    ] {
        if given && !loops {
            return Err(usage(format!(
                "{flag} applies to the loop families (or remdm with --sigma loopwindow), not {name}"
            )));
        }
    }
    if flags.tau_remask.is_some() && !fam.is_guided() {
        return Err(usage(format!(
            "--tau-remask applies to the guided families, not {name}"
        )));
    }
    if flags.tau_diffuse.is_some()
        && matches!(fam, SamplerFamily::Mdlm | SamplerFamily::Remdm)
    {
        return Err(usage(format!(
            "--tau-diffuse applies to the star-style families, not {name}"
        )));
    }
    Ok(())
}

/// Compile flags into a validated, resolved config. `steps` comes in
/// separately so sweeps over the step count can grid it.
pub fn build_config(flags: &ConfigFlags, steps: usize, vocab: Vocab) -> Result<RunConfig> {
    check_flag_conflicts(flags)?;
    let clamped = parse_clamps(&flags.clamps, flags.length)?;
    // Route through the schema so omitted flags get its defaults.
    let mut obj = serde_json::Map::new();
    obj.insert("vocab".into(), json!(vocab.size()));
    obj.insert("sequence_length".into(), json!(flags.length));
    obj.insert("total_steps".into(), json!(steps));
    obj.insert("schedule".into(), serde_json::to_value(flags.schedule)?);
    obj.insert("sampler".into(), serde_json::to_value(flags.family)?);
    obj.insert("base_seed".into(), json!(flags.seed));
    if let Some(v) = flags.t_on {
        obj.insert("t_on".into(), json!(v));
    }
    if let Some(v) = flags.eta {
        obj.insert("eta".into(), json!(v));
    }
    if let Some(v) = flags.sigma {
        obj.insert("sigma".into(), serde_json::to_value(v)?);
    }
    if let Some(v) = flags.alpha_on {
        obj.insert("alpha_on".into(), json!(v));
    }
    if let Some(v) = flags.loop_fraction {
        obj.insert("loop_fraction".into(), json!(v));
    }
    if let Some(v) = flags.tau_remask {
        obj.insert("tau_remask".into(), json!(v));
    }
    if let Some(v) = flags.tau_diffuse {
        obj.insert("tau_diffuse".into(), json!(v));
    }
    if let Some(v) = flags.n_remask {
        obj.insert("n_remask".into(), json!(v));
    }
    if !clamped.is_empty() {
        obj.insert("clamped".into(), serde_json::to_value(&clamped)?);
    }
    let cfg: RunConfig = serde_json::from_value(serde_json::Value::Object(obj))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Load the denoiser, predictor, and truth source named by `run`, checking
/// the combinations that can be checked before sampling starts.
pub fn resolve_inputs(
    run: &RunFlags,
    fam: SamplerFamily,
) -> Result<(Box<dyn Denoiser>, Option<ErrorPredictor>, TruthSource)> {
    let denoiser = load_denoiser(&run.denoiser)?;
    let name = enum_name(&fam);
    let predictor = match (&run.predictor, fam.is_guided()) {
        (Some(spec), true) => Some(load_predictor(spec)?),
        (None, true) => {
            return Err(usage(format!(
                "the {name} family needs --predictor (a checkpoint path, \"entropy\", or \"oracle\")"
            )))
        }
        (Some(_), false) => {
            return Err(usage(format!(
                "--predictor applies to the guided families, not {name}"
            )))
        }
        (None, false) => None,
    };
    let oracle = matches!(predictor, Some(ErrorPredictor::Oracle));
    let truth = match (&run.truth_chain, &run.truth_data) {
        (Some(_), Some(_)) => {
            return Err(usage("pass --truth-chain or --truth-data, not both"))
        }
        (Some(path), None) if oracle => TruthSource::Chain(load_chain(path)?),
        (None, Some(path)) if oracle => {
            TruthSource::Rows(read_dataset(path, &denoiser.vocab())?)
        }
        (None, None) if oracle => {
            return Err(usage(
                "the oracle predictor needs --truth-chain or --truth-data",
            ))
        }
        (None, None) => TruthSource::None,
        _ => {
            return Err(usage(
                "--truth-chain/--truth-data apply only with --predictor oracle",
            ))
        }
    };
    Ok((denoiser, predictor, truth))
}

/// Run `count` trajectories of `cfg`. Sample `i` owns RNG stream `i`, so the
/// batch is identical for any worker count and any partitioning.
pub fn generate(
    cfg: &RunConfig,
    denoiser: &dyn Denoiser,
    predictor: Option<&ErrorPredictor>,
    truth: &TruthSource,
    count: usize,
) -> Result<Vec<Trajectory>> {
    truth.check_coverage(cfg, count)?;
    let trajs = (0..count)
        .into_par_iter()
        .map(|i| {
            let reference = truth.for_index(cfg, i as u64);
            let mut rng = sample_rng(cfg, i as u64);
            run_trajectory(cfg, denoiser, predictor, reference.as_ref(), &mut rng)
        })
        .collect::<stardiff_core::Result<Vec<_>>>()?;
    for traj in &trajs {
        assert!(
            traj.final_state().is_clean(&cfg.vocab),
            "sampler emitted a masked token"
        );
    }
    Ok(trajs)
}

/// Step-phase split recorded for loop-shaped runs.
#[derive(Serialize)]
pub struct PlanMeta {
    pub draft_steps: usize,
    pub loop_steps: usize,
    pub finish_steps: usize,
    pub alpha_on: f64,
}

#[derive(Serialize)]
pub struct RunMeta {
    pub config_id: String,
    pub count: usize,
    pub denoiser: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictor: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanMeta>,
}

pub fn run_meta(cfg: &RunConfig, run: &RunFlags) -> Result<RunMeta> {
    let plan = if cfg.sampler.is_loop() || cfg.sigma == SigmaKind::Loopwindow {
        let lp = LoopPlan::from_config(cfg)?;
        Some(PlanMeta {
            draft_steps: lp.draft_steps,
            loop_steps: lp.loop_steps,
            finish_steps: lp.finish_steps,
            alpha_on: lp.alpha_on,
        })
    } else {
        None
    };
    Ok(RunMeta {
        config_id: cfg.config_id(),
        count: run.count,
        denoiser: run.denoiser.display().to_string(),
        predictor: run.predictor.clone(),
        plan,
    })
}

/// Write `config.json`, `samples.jsonl`, `meta.json` (and `traj.jsonl` when
/// asked) under `<parent>/<config_id>/`; returns the run directory.
pub fn write_run_dir(
    parent: &Path,
    cfg: &RunConfig,
    trajs: &[Trajectory],
    dump_traj: bool,
    meta: &RunMeta,
) -> Result<PathBuf> {
    let dir = parent.join(cfg.config_id());
    create_dir(&dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    let finals: Vec<_> = trajs.iter().map(|t| t.final_state().clone()).collect();
    write_dataset(dir.join("samples.jsonl"), &finals)?;
    if dump_traj {
        write_traj(&dir.join("traj.jsonl"), trajs)?;
    }
    write_json(&dir.join("meta.json"), meta)?;
    Ok(dir)
}

pub fn run(args: SampleArgs) -> Result<()> {
    let (denoiser, predictor, truth) = resolve_inputs(&args.run, args.cfg.family)?;
    let steps = args
        .cfg
        .steps
        .ok_or_else(|| usage("missing --steps"))?;
    let cfg = build_config(&args.cfg, steps, denoiser.vocab())?.resolved();
    let trajs = generate(
        &cfg,
        denoiser.as_ref(),
        predictor.as_ref(),
        &truth,
        args.run.count,
    )?;
    let meta = run_meta(&cfg, &args.run)?;
    let dir = write_run_dir(&args.out, &cfg, &trajs, args.dump_traj, &meta)?;
    println!("{}", dir.display());
    Ok(())
}
