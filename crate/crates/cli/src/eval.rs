//! `eval`: metrics for a finished run directory, written as `metrics.csv`
//! (`config_id,metric,value`) plus a `metrics.json` sidecar embedding the
//! resolved config. All metrics are pure functions of the stored artifacts,
//! so a rerun reproduces the files byte for byte.

use crate::util::{
    load_chain, load_denoiser, load_predictor, read_config, read_traj, usage, write_json,
    write_metrics_csv,
};
use anyhow::Result;
use clap::Args;
use serde::Serialize;
use stardiff_core::config::RunConfig;
use stardiff_core::corpus::read_dataset;
use stardiff_core::denoiser::Denoiser;
use stardiff_core::error_predictor::ErrorPredictor;
use stardiff_core::eval::{infill_accuracy, mean_diversity, oracle_gen_ppl, step_similarity_curve};
use stardiff_core::samplers::Trajectory;
use stardiff_core::types::Sequence;
use stardiff_core::verify::{enumerate_config, ExactDistribution};
use stardiff_core::{Chain, Error};
use std::collections::BTreeSet;
use std::path::PathBuf;

#[derive(Args)]
pub struct EvalArgs {
    /// Run directory produced by `sample` (config.json + samples.jsonl)
    #[arg(long)]
    pub run: PathBuf,
    /// Data-generating chain JSON, for oracle perplexity
    #[arg(long)]
    pub chain: PathBuf,
    /// Ground-truth dataset; row i scores sample i on its unclamped positions
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Also compute exact total variation against the enumerated sampler law
    #[arg(long)]
    pub tv: bool,
    /// Denoiser checkpoint (required by --tv)
    #[arg(long)]
    pub denoiser: Option<PathBuf>,
    /// Predictor for --tv on guided configs: checkpoint path or "entropy"
    #[arg(long)]
    pub predictor: Option<String>,
}

/// Inputs for the exact-TV column.
pub struct TvCheck {
    pub denoiser: Box<dyn Denoiser>,
    pub predictor: Option<ErrorPredictor>,
}

/// Resolve the `--tv`/`--denoiser`/`--predictor` triple for `cfg`.
pub fn resolve_tv(
    tv: bool,
    denoiser: Option<&PathBuf>,
    predictor: Option<&str>,
    cfg: &RunConfig,
) -> Result<Option<TvCheck>> {
    if !tv {
        if denoiser.is_some() || predictor.is_some() {
            return Err(usage("--denoiser/--predictor only matter with --tv"));
        }
        return Ok(None);
    }
    let denoiser = load_denoiser(denoiser.ok_or_else(|| usage("--tv needs --denoiser"))?)?;
    let predictor = match (predictor, cfg.sampler.is_guided()) {
        (Some("oracle"), _) => {
            return Err(usage(
                "--tv cannot use the oracle predictor; it conditions on per-sample truths",
            ))
        }
        (Some(spec), true) => Some(load_predictor(spec)?),
        (None, true) => {
            return Err(usage(
                "--tv on a guided config needs --predictor (a checkpoint path or \"entropy\")",
            ))
        }
        (Some(_), false) => {
            return Err(usage("--predictor only matters for guided configs"));
        }
        (None, false) => None,
    };
    Ok(Some(TvCheck { denoiser, predictor }))
}

/// Metric rows in stable order, plus the step-similarity curve when
/// trajectories were recorded.
pub struct Metrics {
    pub rows: Vec<(String, f64)>,
    pub curve: Option<Vec<f64>>,
}

pub fn compute_metrics(
    cfg: &RunConfig,
    chain: &Chain,
    samples: &[Sequence],
    trajs: Option<&[Trajectory]>,
    truth: Option<&[Sequence]>,
    tv: Option<&TvCheck>,
) -> Result<Metrics> {
    if chain.size() != cfg.vocab.size() {
        return Err(Error::Config(format!(
            "{}-state chain cannot score a size-{} vocabulary",
            chain.size(),
            cfg.vocab.size()
        ))
        .into());
    }
    let mut rows = Vec::new();
    let ppl = oracle_gen_ppl(chain, samples)?;
    rows.push(("oracle_ppl".to_string(), ppl.ppl));
    rows.push(("impossible".to_string(), ppl.impossible as f64));
    rows.push(("mean_diversity".to_string(), mean_diversity(samples)?));

    let curve = match trajs {
        Some(trajs) => {
            let curve = step_similarity_curve(trajs)?;
            let mean = curve.iter().sum::<f64>() / curve.len().max(1) as f64;
            rows.push(("step_similarity_mean".to_string(), mean));
            Some(curve)
        }
        None => None,
    };

    if let Some(truth) = truth {
        if truth.len() < samples.len() {
            return Err(Error::Config(format!(
                "truth dataset has {} rows but the run has {} samples",
                truth.len(),
                samples.len()
            ))
            .into());
        }
        let clamped: BTreeSet<usize> = cfg.clamped.iter().map(|&(pos, _)| pos).collect();
        let held: BTreeSet<usize> = (0..cfg.sequence_length)
            .filter(|pos| !clamped.contains(pos))
            .collect();
        let mut total = 0.0;
        for (sample, reference) in samples.iter().zip(truth) {
            total += infill_accuracy(reference, sample, &held)?;
        }
        rows.push((
            "infill_accuracy".to_string(),
            total / samples.len().max(1) as f64,
        ));
    }

    if let Some(check) = tv {
        let exact = enumerate_config(cfg, check.denoiser.as_ref(), check.predictor.as_ref(), None)?;
        let mut empirical = ExactDistribution::new();
        let w = 1.0 / samples.len() as f64;
        for s in samples {
            empirical.add(s.clone(), w);
        }
        rows.push(("tv".to_string(), exact.tv(&empirical)));
    }
    Ok(Metrics { rows, curve })
}

#[derive(Serialize)]
struct MetricEntry<'a> {
    metric: &'a str,
    value: f64,
}

/// Sidecar document; non-finite values serialize as JSON null (the CSV keeps
/// the literal `inf`/`NaN` spelling).
#[derive(Serialize)]
struct MetricsDoc<'a> {
    config_id: &'a str,
    config: &'a RunConfig,
    metrics: Vec<MetricEntry<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    step_similarity: Option<&'a [f64]>,
}

/// Write `metrics.csv` + `metrics.json` into the run directory.
pub fn write_metric_files(
    dir: &std::path::Path,
    cfg: &RunConfig,
    rows: &[(String, f64)],
    curve: Option<&[f64]>,
) -> Result<()> {
    let config_id = cfg.config_id();
    write_metrics_csv(&dir.join("metrics.csv"), &config_id, rows)?;
    let doc = MetricsDoc {
        config_id: &config_id,
        config: cfg,
        metrics: rows
            .iter()
            .map(|(metric, value)| MetricEntry {
                metric,
                value: *value,
            })
            .collect(),
        step_similarity: curve,
    };
    write_json(&dir.join("metrics.json"), &doc)?;
    Ok(())
}

pub fn run(args: EvalArgs) -> Result<()> {
    let cfg = read_config(&args.run.join("config.json"))?;
    let samples = read_dataset(args.run.join("samples.jsonl"), &cfg.vocab)?;
    let chain = load_chain(&args.chain)?;
    let traj_path = args.run.join("traj.jsonl");
    let trajs = if traj_path.exists() {
        Some(read_traj(&traj_path)?)
    } else {
        None
    };
    let truth = args
        .truth
        .as_ref()
        .map(|path| read_dataset(path, &cfg.vocab))
        .transpose()?;
    let tv = resolve_tv(args.tv, args.denoiser.as_ref(), args.predictor.as_deref(), &cfg)?;

    let metrics = compute_metrics(
        &cfg,
        &chain,
        &samples,
        trajs.as_deref(),
        truth.as_deref(),
        tv.as_ref(),
    )?;
    write_metric_files(&args.run, &cfg, &metrics.rows, metrics.curve.as_deref())?;
    for (metric, value) in &metrics.rows {
        println!("{metric} = {value}");
    }
    Ok(())
}
