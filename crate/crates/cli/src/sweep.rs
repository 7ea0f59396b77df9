//! `sweep`: a grid over one named parameter. Every cell runs the exact
//! `sample` and `eval` code paths into `out/cells/<config_id>/`, and the
//! aggregated `sweep.csv` is assembled in grid order, never completion order.

use crate::eval::{compute_metrics, resolve_tv, write_metric_files};
use crate::sample::{build_config, generate, run_meta, write_run_dir, ConfigFlags, RunFlags};
use crate::util::{create_dir, enum_name, load_chain, usage};
use anyhow::Result;
use clap::Args;
use stardiff_core::config::{RunConfig, SamplerFamily};
use stardiff_core::noise::sigma_max;
use stardiff_core::samplers::{plan_steps, StepOp};
use std::path::PathBuf;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SweepParam {
    TOn,
    Eta,
    LoopSteps,
    TauRemask,
    TotalSteps,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::TOn => "t_on",
            SweepParam::Eta => "eta",
            SweepParam::LoopSteps => "loop_steps",
            SweepParam::TauRemask => "tau_remask",
            SweepParam::TotalSteps => "T",
        }
    }

    fn integral(self) -> bool {
        matches!(self, SweepParam::LoopSteps | SweepParam::TotalSteps)
    }
}

pub fn parse_param(s: &str) -> std::result::Result<SweepParam, String> {
    Ok(match s {
        "t_on" => SweepParam::TOn,
        "eta" => SweepParam::Eta,
        "loop_steps" => SweepParam::LoopSteps,
        "tau_remask" => SweepParam::TauRemask,
        "T" => SweepParam::TotalSteps,
        other => {
            return Err(format!(
                "unknown parameter name {other:?} (expected t_on, eta, loop_steps, tau_remask, or T)"
            ))
        }
    })
}

#[derive(Args)]
pub struct SweepArgs {
    /// Parameter to grid: t_on | eta | loop_steps | tau_remask | T
    #[arg(long, value_parser = parse_param)]
    pub param: SweepParam,
    /// Comma-separated grid (defaults: t_on 0..1 by 0.1, eta 0..0.2 by 0.02,
    /// tau_remask 0,1,2,4,...,64; loop_steps and T have no default)
    #[arg(long)]
    pub values: Option<String>,
    #[command(flatten)]
    pub cfg: ConfigFlags,
    #[command(flatten)]
    pub run: RunFlags,
    /// Data-generating chain JSON, for cell metrics
    #[arg(long)]
    pub chain: PathBuf,
    /// Include the exact-TV column (cells must stay enumerable)
    #[arg(long)]
    pub tv: bool,
    /// Predictor for --tv on guided configs: checkpoint path or "entropy"
    #[arg(long)]
    pub tv_predictor: Option<String>,
    /// Sweep directory: sweep.csv + cells/<config_id>/
    #[arg(long)]
    pub out: PathBuf,
}

fn grid(param: SweepParam, values: Option<&str>) -> Result<Vec<f64>> {
    let parsed = match values {
        Some(list) => {
            let mut out = Vec::new();
            for item in list.split(',') {
                let v: f64 = item
                    .trim()
                    .parse()
                    .map_err(|_| usage(format!("bad grid value {item:?}")))?;
                if param.integral() && (v.fract() != 0.0 || v < 0.0) {
                    return Err(usage(format!(
                        "{} takes non-negative integer values, got {item:?}",
                        param.name()
                    )));
                }
                out.push(v);
            }
            if out.is_empty() {
                return Err(usage("--values lists no grid values"));
            }
            out
        }
        None => match param {
            SweepParam::TOn => (0..=10).map(|i| i as f64 / 10.0).collect(),
            SweepParam::Eta => (0..=10).map(|i| i as f64 * 0.02).collect(),
            SweepParam::TauRemask => vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            SweepParam::LoopSteps | SweepParam::TotalSteps => {
                return Err(usage(format!(
                    "{} has no default grid; pass --values",
                    param.name()
                )))
            }
        },
    };
    Ok(parsed)
}

/// The swept parameter must be one its family reads, and must not also be
/// pinned by a base flag.
fn check_sweep_compat(param: SweepParam, flags: &ConfigFlags) -> Result<()> {
    let fam = flags.family;
    let name = enum_name(&fam);
    let bad_family = |needs: &str| {
        Err(usage(format!(
            "--param {} needs {needs}, not {name}",
            param.name()
        )))
    };
    match param {
        SweepParam::TOn => {
            if !matches!(fam, SamplerFamily::Hybrid | SamplerFamily::Gstar) {
                return bad_family("the hybrid or gstar family");
            }
            if flags.t_on.is_some() {
                return Err(usage("--t-on conflicts with --param t_on; the grid sets it"));
            }
        }
        SweepParam::Eta => {
            if fam != SamplerFamily::Remdm {
                return bad_family("the remdm family");
            }
            if flags.eta.is_some() {
                return Err(usage("--eta conflicts with --param eta; the grid sets it"));
            }
            if flags.sigma.is_none() {
                return Err(usage(
                    "an eta sweep needs --sigma cap, rescale, or loopwindow",
                ));
            }
        }
        SweepParam::LoopSteps => {
            if !fam.is_loop() {
                return bad_family("a loop family");
            }
            if flags.loop_fraction.is_some() {
                return Err(usage(
                    "--loop-fraction conflicts with --param loop_steps; the grid sets it",
                ));
            }
        }
        SweepParam::TauRemask => {
            if !fam.is_guided() {
                return bad_family("a guided family");
            }
            if flags.tau_remask.is_some() {
                return Err(usage(
                    "--tau-remask conflicts with --param tau_remask; the grid sets it",
                ));
            }
        }
        SweepParam::TotalSteps => {
            if flags.steps.is_some() {
                return Err(usage("--steps conflicts with --param T; the grid sets it"));
            }
        }
    }
    if param != SweepParam::TotalSteps && flags.steps.is_none() {
        return Err(usage("missing --steps"));
    }
    Ok(())
}

fn apply(param: SweepParam, cfg: &mut RunConfig, value: f64) {
    match param {
        SweepParam::TOn => cfg.t_on = value,
        SweepParam::Eta => cfg.eta = value,
        SweepParam::LoopSteps => cfg.loop_fraction = value / cfg.total_steps as f64,
        SweepParam::TauRemask => cfg.tau_remask = value,
        SweepParam::TotalSteps => cfg.total_steps = value as usize,
    }
}

/// Every kernel step's budget must sit inside `[0, sigma_max]`; the schedule
/// clamps, so this re-derives the invariant from the compiled plan.
fn sigma_valid(cfg: &RunConfig) -> Result<bool> {
    Ok(plan_steps(cfg)?.iter().all(|op| match *op {
        StepOp::Kernel {
            alpha_t,
            alpha_s,
            sigma,
            ..
        } => sigma >= 0.0 && sigma <= sigma_max(alpha_t, alpha_s),
        _ => true,
    }))
}

struct CellRow {
    config_id: String,
    value: f64,
    sigma_valid: bool,
    metrics: Vec<(String, f64)>,
}

pub fn run(args: SweepArgs) -> Result<()> {
    check_sweep_compat(args.param, &args.cfg)?;
    let values = grid(args.param, args.values.as_deref())?;
    if !args.tv && args.tv_predictor.is_some() {
        return Err(usage("--tv-predictor only matters with --tv"));
    }
    let (denoiser, predictor, truth) =
        crate::sample::resolve_inputs(&args.run, args.cfg.family)?;
    let chain = load_chain(&args.chain)?;
    // For T sweeps the first grid value seeds the base config; apply()
    // overwrites it per cell. check_sweep_compat guarantees the flag
    // otherwise.
    let steps = match args.param {
        SweepParam::TotalSteps => values[0] as usize,
        _ => args.cfg.steps.expect("checked in check_sweep_compat"),
    };
    let base = build_config(&args.cfg, steps, denoiser.vocab())?;
    let tv = resolve_tv(
        args.tv,
        args.tv.then_some(&args.run.denoiser),
        args.tv_predictor.as_deref(),
        &base,
    )?;

    let cells_dir = args.out.join("cells");
    create_dir(&cells_dir)?;
    let mut cells: Vec<CellRow> = Vec::with_capacity(values.len());
    for &value in &values {
        let mut cfg = base.clone();
        apply(args.param, &mut cfg, value);
        cfg.validate()?;
        let cfg = cfg.resolved();
        let trajs = generate(
            &cfg,
            denoiser.as_ref(),
            predictor.as_ref(),
            &truth,
            args.run.count,
        )?;
        let meta = run_meta(&cfg, &args.run)?;
        let dir = write_run_dir(&cells_dir, &cfg, &trajs, false, &meta)?;
        let finals: Vec<_> = trajs.iter().map(|t| t.final_state().clone()).collect();
        let metrics = compute_metrics(&cfg, &chain, &finals, None, None, tv.as_ref())?;
        write_metric_files(&dir, &cfg, &metrics.rows, None)?;
        cells.push(CellRow {
            config_id: cfg.config_id(),
            value,
            sigma_valid: sigma_valid(&cfg)?,
            metrics: metrics.rows,
        });
    }

    // Flag the winner: the cell with the lowest oracle perplexity.
    let ppl_at = |cell: &CellRow| {
        cell.metrics
            .iter()
            .find(|(name, _)| name == "oracle_ppl")
            .map_or(f64::INFINITY, |&(_, v)| v)
    };
    let winner = cells
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| ppl_at(a).total_cmp(&ppl_at(b)))
        .map(|(i, _)| i);

    let metric_names: Vec<&str> = cells[0]
        .metrics
        .iter()
        .map(|(name, _)| name.as_str())
        .collect();
    let mut csv = format!(
        "config_id,param,value,sigma_valid,{},winner\n",
        metric_names.join(",")
    );
    for (i, cell) in cells.iter().enumerate() {
        let metrics: Vec<String> = cell.metrics.iter().map(|(_, v)| v.to_string()).collect();
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell.config_id,
            args.param.name(),
            cell.value,
            cell.sigma_valid,
            metrics.join(","),
            winner == Some(i)
        ));
    }
    let csv_path = args.out.join("sweep.csv");
    std::fs::write(&csv_path, &csv)?;
    print!("{csv}");
    println!("wrote {}", csv_path.display());
    Ok(())
}
