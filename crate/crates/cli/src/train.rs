//! `train`: fit checkpoints. The denoiser subtarget fits the
//! neighbour-context count table (or wraps a chain as the exact oracle); the
//! predictor subtarget fits the logistic error scorer on rows disjoint from
//! the denoiser's, with the split recorded and enforced through digests.

use crate::util::{ensure_parent, load_chain, parse_range, parse_schedule, usage, write_json};
use anyhow::{Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;
use stardiff_core::corpus::{dataset_digest, read_dataset};
use stardiff_core::denoiser::{
    read_denoiser, write_denoiser, MarkovOracleDenoiser, SplitInfo, TabularDenoiser,
};
use stardiff_core::error_predictor::{
    build_training_rows, roc_auc, train_logistic, write_predictor, LogisticHyper,
    PredictorCheckpoint, TrainRow,
};
use stardiff_core::noise::{NoiseSchedule, ScheduleKind};
use stardiff_core::rng::{RngStream, StreamPurpose};
use stardiff_core::types::{Sequence, Vocab};
use stardiff_core::Error;
use std::path::{Path, PathBuf};

#[derive(Subcommand)]
pub enum TrainCmd {
    /// Count-based neighbour-context denoiser, or the exact chain oracle
    Denoiser(DenoiserArgs),
    /// Logistic error predictor on a split disjoint from the denoiser's
    Predictor(PredictorArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenoiserKind {
    Tabular,
    MarkovOracle,
}

#[derive(Args)]
pub struct DenoiserArgs {
    #[arg(long, value_enum, default_value_t = DenoiserKind::Tabular)]
    pub kind: DenoiserKind,
    /// Clean JSON-lines training data (tabular)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Real-symbol vocabulary size (tabular)
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Chain JSON to wrap exactly (markov-oracle)
    #[arg(long)]
    pub chain: Option<PathBuf>,
    /// Rows fitted on, half-open "START:END" (default: the whole file)
    #[arg(long, value_parser = parse_range)]
    pub range: Option<(usize, usize)>,
    /// Additive smoothing per symbol
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    /// Corruption passes over the data
    #[arg(long, default_value_t = 4)]
    pub passes: usize,
    #[arg(long, value_parser = parse_schedule, default_value = "linear")]
    pub schedule: ScheduleKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint JSON
    #[arg(long)]
    pub out: PathBuf,
    /// Training-report JSON (default: <out>.report.json)
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictorArgs {
    /// Clean JSON-lines data; must be the file the denoiser's split records
    #[arg(long)]
    pub data: PathBuf,
    /// Denoiser checkpoint that produces the candidates to score
    #[arg(long)]
    pub denoiser: PathBuf,
    /// Training rows "START:END" (default: every row outside the denoiser's)
    #[arg(long, value_parser = parse_range)]
    pub range: Option<(usize, usize)>,
    /// Validation rows "START:END" for the AUC (default: the tail quarter of
    /// the training rows, held out)
    #[arg(long, value_parser = parse_range)]
    pub eval_range: Option<(usize, usize)>,
    /// Corruption passes over the training rows
    #[arg(long, default_value_t = 2)]
    pub passes: usize,
    #[arg(long, value_parser = parse_schedule, default_value = "linear")]
    pub schedule: ScheduleKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Gradient-descent epochs
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub learning_rate: f64,
    /// Checkpoint JSON
    #[arg(long)]
    pub out: PathBuf,
    /// Training-report JSON (default: <out>.report.json)
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn run(cmd: TrainCmd) -> Result<()> {
    match cmd {
        TrainCmd::Denoiser(args) => run_denoiser(args),
        TrainCmd::Predictor(args) => run_predictor(args),
    }
}

fn report_path(out: &Path, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| out.with_extension("report.json"))
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DenoiserReport {
    Tabular {
        rows: usize,
        passes: usize,
        lambda: f64,
        schedule: ScheduleKind,
        data_digest: String,
        train_range: (usize, usize),
    },
    MarkovOracle {
        states: usize,
    },
}

fn run_denoiser(args: DenoiserArgs) -> Result<()> {
    let (ckpt, report) = match args.kind {
        DenoiserKind::Tabular => {
            if args.chain.is_some() {
                return Err(usage("--chain applies to --kind markov-oracle, not tabular"));
            }
            let data_path = args
                .data
                .as_ref()
                .ok_or_else(|| usage("--kind tabular needs --data"))?;
            let vocab = Vocab::new(
                args.vocab
                    .ok_or_else(|| usage("--kind tabular needs --vocab"))?,
            )?;
            let data = read_dataset(data_path, &vocab)
                .with_context(|| format!("reading {}", data_path.display()))?;
            let (start, end) = args.range.unwrap_or((0, data.len()));
            if end > data.len() {
                return Err(Error::Config(format!(
                    "--range {start}:{end} exceeds the {}-row dataset",
                    data.len()
                ))
                .into());
            }
            // alpha(t) never touches the step grid, so a one-step schedule
            // is enough for fitting.
            let sched = NoiseSchedule::new(args.schedule, 1)?;
            let mut rng = RngStream::for_purpose(args.seed, StreamPurpose::DenoiserFit, 0);
            let den = TabularDenoiser::fit(
                &data[start..end],
                vocab,
                &sched,
                args.lambda,
                args.passes,
                &mut rng,
            )?;
            let digest = dataset_digest(&data);
            let ckpt = den.checkpoint().with_split(SplitInfo {
                data_digest: digest.clone(),
                train_start: start,
                train_end: end,
            });
            let report = DenoiserReport::Tabular {
                rows: end - start,
                passes: args.passes,
                lambda: args.lambda,
                schedule: args.schedule,
                data_digest: digest,
                train_range: (start, end),
            };
            (ckpt, report)
        }
        DenoiserKind::MarkovOracle => {
            for (flag, given) in [
                ("--data", args.data.is_some()),
                ("--vocab", args.vocab.is_some()),
                ("--range", args.range.is_some()),
            ] {
                if given {
                    return Err(usage(format!(
                        "{flag} applies to --kind tabular; markov-oracle wraps the chain exactly"
                    )));
                }
            }
            let path = args
                .chain
                .as_ref()
                .ok_or_else(|| usage("--kind markov-oracle needs --chain"))?;
            let chain = load_chain(path)?;
            let states = chain.size();
            let ckpt = MarkovOracleDenoiser::new(chain).checkpoint();
            (ckpt, DenoiserReport::MarkovOracle { states })
        }
    };
    ensure_parent(&args.out)?;
    write_denoiser(&args.out, &ckpt)?;
    write_json(&report_path(&args.out, args.report), &report)?;
    println!("wrote denoiser checkpoint {}", args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct LabelBalance {
    positives: usize,
    negatives: usize,
    positive_fraction: f64,
    /// Positive labels on carried-over (not freshly committed) positions.
    /// Carried tokens equal the clean ones by construction, so this is 0.
    carry_over_positives: usize,
}

#[derive(Serialize)]
struct PredictorReport {
    train_rows: usize,
    eval_rows: usize,
    label_balance: LabelBalance,
    loss_curve: Vec<f64>,
    auc: Option<f64>,
    degenerate: bool,
}

fn overlap(a: &(usize, usize), b: &(usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1 && a.0 < a.1 && b.0 < b.1
}

fn check_bounds(range: &(usize, usize), len: usize, what: &str) -> Result<()> {
    if range.1 > len {
        return Err(Error::Config(format!(
            "{what} {}:{} exceeds the {len}-row dataset",
            range.0, range.1
        ))
        .into());
    }
    Ok(())
}

fn run_predictor(args: PredictorArgs) -> Result<()> {
    let ckpt = read_denoiser(&args.denoiser)
        .with_context(|| format!("reading denoiser {}", args.denoiser.display()))?;
    let denoiser = ckpt.instantiate()?;
    let vocab = denoiser.vocab();
    let data = read_dataset(&args.data, &vocab)
        .with_context(|| format!("reading {}", args.data.display()))?;

    let denoiser_range = match ckpt.split() {
        Some(split) => {
            let digest = dataset_digest(&data);
            if digest != split.data_digest {
                return Err(Error::Split(format!(
                    "{} is not the dataset the denoiser was fitted on (digest {} != {})",
                    args.data.display(),
                    &digest[..12],
                    &split.data_digest[..12]
                ))
                .into());
            }
            Some((split.train_start, split.train_end))
        }
        None => None,
    };

    // Training indices: the explicit range, or everything the denoiser
    // didn't see.
    let mut train_idx: Vec<usize> = match args.range {
        Some(range) => {
            check_bounds(&range, data.len(), "--range")?;
            if let Some(dr) = denoiser_range {
                if overlap(&range, &dr) {
                    return Err(Error::Split(format!(
                        "--range {}:{} overlaps the denoiser's training rows {}:{}",
                        range.0, range.1, dr.0, dr.1
                    ))
                    .into());
                }
            }
            (range.0..range.1).collect()
        }
        None => (0..data.len())
            .filter(|&i| denoiser_range.is_none_or(|(s, e)| i < s || i >= e))
            .collect(),
    };

    let eval_idx: Vec<usize> = match args.eval_range {
        Some(range) => {
            check_bounds(&range, data.len(), "--eval-range")?;
            if let Some(&i) = train_idx.iter().find(|&&i| i >= range.0 && i < range.1) {
                return Err(Error::Split(format!(
                    "--eval-range {}:{} overlaps the predictor's training rows (row {i})",
                    range.0, range.1
                ))
                .into());
            }
            (range.0..range.1).collect()
        }
        // Hold out the tail quarter of the training rows.
        None => train_idx.split_off(train_idx.len() - train_idx.len() / 4),
    };
    if train_idx.is_empty() {
        return Err(Error::Split("no training rows left for the predictor".into()).into());
    }

    let gather = |idx: &[usize]| -> Vec<Sequence> { idx.iter().map(|&i| data[i].clone()).collect() };
    let sched = NoiseSchedule::new(args.schedule, 1)?;
    let mut train_rng = RngStream::for_purpose(args.seed, StreamPurpose::PredictorRows, 0);
    let rows = build_training_rows(
        &gather(&train_idx),
        denoiser.as_ref(),
        &sched,
        args.passes,
        &mut train_rng,
    )?;

    let hyper = LogisticHyper {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        ..LogisticHyper::default()
    };
    let (model, loss_curve) = train_logistic(&rows, &hyper)?;

    let eval_rows: Vec<TrainRow> = if eval_idx.is_empty() {
        Vec::new()
    } else {
        let mut eval_rng = RngStream::for_purpose(args.seed, StreamPurpose::PredictorRows, 1);
        build_training_rows(&gather(&eval_idx), denoiser.as_ref(), &sched, 1, &mut eval_rng)?
    };
    let scores: Vec<f64> = eval_rows.iter().map(|r| model.score(&r.features)).collect();
    let labels: Vec<bool> = eval_rows.iter().map(|r| r.label).collect();
    let auc = roc_auc(&scores, &labels);

    let positives = rows.iter().filter(|r| r.label).count();
    let report = PredictorReport {
        train_rows: rows.len(),
        eval_rows: eval_rows.len(),
        label_balance: LabelBalance {
            positives,
            negatives: rows.len() - positives,
            positive_fraction: positives as f64 / rows.len() as f64,
            carry_over_positives: rows.iter().filter(|r| !r.fresh && r.label).count(),
        },
        loss_curve,
        auc,
        degenerate: model.degenerate,
    };

    ensure_parent(&args.out)?;
    write_predictor(
        &args.out,
        &PredictorCheckpoint::Logistic {
            weights: model.weights,
            degenerate: model.degenerate,
        },
    )?;
    write_json(&report_path(&args.out, args.report), &report)?;
    match report.auc {
        Some(auc) => println!(
            "wrote predictor checkpoint {} (validation AUC {auc:.4})",
            args.out.display()
        ),
        None => println!(
            "wrote predictor checkpoint {} (no validation AUC: single-class or empty slice)",
            args.out.display()
        ),
    }
    Ok(())
}
