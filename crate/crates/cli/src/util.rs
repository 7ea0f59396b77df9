//! Shared plumbing: exit-code mapping, flag parsers, checkpoint loading,
//! ground-truth sources, and the trajectory dump format.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stardiff_core::config::RunConfig;
use stardiff_core::denoiser::{read_denoiser, Denoiser};
use stardiff_core::error_predictor::{read_predictor, ErrorPredictor};
use stardiff_core::noise::{ScheduleKind, SigmaKind};
use stardiff_core::samplers::{truth_rng, Trajectory};
use stardiff_core::types::{Sequence, Token};
use stardiff_core::Chain;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Bad flag combination or malformed flag value. Exit code 2, like clap's
/// own parse errors, so "usage" means the same thing everywhere.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

/// One or more battery checks failed. Exit code 4.
#[derive(Debug)]
pub struct VerifyFailure(pub usize);

impl fmt::Display for VerifyFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} verification check(s) failed", self.0)
    }
}

impl std::error::Error for VerifyFailure {}

/// Stable contract: 0 success, 2 usage, 3 operational (config, budget,
/// splits, malformed files, IO), 4 verification failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.is::<UsageError>() {
        2
    } else if err.is::<VerifyFailure>() {
        4
    } else {
        3
    }
}

/// `STARDIFF_WORKERS` pins the rayon pool size. Outputs are stream-addressed
/// per sample, so the worker count changes speed, never bytes.
pub fn init_worker_pool() -> Result<()> {
    if let Ok(raw) = std::env::var("STARDIFF_WORKERS") {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| {
                usage(format!(
                    "STARDIFF_WORKERS must be a positive integer, got {raw:?}"
                ))
            })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initialising the worker pool")?;
    }
    Ok(())
}

fn parse_kebab<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

pub fn parse_family(
    s: &str,
) -> std::result::Result<stardiff_core::config::SamplerFamily, String> {
    parse_kebab(s)
}

pub fn parse_schedule(s: &str) -> std::result::Result<ScheduleKind, String> {
    parse_kebab(s)
}

pub fn parse_sigma(s: &str) -> std::result::Result<SigmaKind, String> {
    parse_kebab(s)
}

/// The serialized (kebab/lowercase) name of a config enum, for messages.
pub fn enum_name<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => "?".into(),
    }
}

/// Half-open row range `"START:END"`.
pub fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected START:END, got {s:?}"))?;
    let a: usize = a.parse().map_err(|_| format!("bad start {a:?}"))?;
    let b: usize = b.parse().map_err(|_| format!("bad end {b:?}"))?;
    if a > b {
        return Err(format!("reversed range {a}:{b}"));
    }
    Ok((a, b))
}

/// Clamp specs `"START:END=id,id,..."`, one token per position in the
/// half-open range. Syntax errors are usage errors; semantic problems
/// (overlaps, bad ids) surface through config validation.
pub fn parse_clamps(specs: &[String], length: usize) -> Result<Vec<(usize, Token)>> {
    let mut clamped = Vec::new();
    for spec in specs {
        let (range, ids) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("--clamp expects START:END=id,id,..., got {spec:?}")))?;
        let (start, end) = parse_range(range).map_err(|e| usage(format!("--clamp {spec:?}: {e}")))?;
        if end > length {
            return Err(usage(format!(
                "--clamp {spec:?} ends past the sequence length {length}"
            )));
        }
        let tokens: Vec<Token> = ids
            .split(',')
            .map(|id| id.trim().parse::<Token>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| usage(format!("--clamp {spec:?} has a non-integer token id")))?;
        if tokens.len() != end - start {
            return Err(usage(format!(
                "--clamp {spec:?} covers {} positions but lists {} ids",
                end - start,
                tokens.len()
            )));
        }
        clamped.extend((start..end).zip(tokens));
    }
    Ok(clamped)
}

pub fn load_chain(path: &Path) -> Result<Chain> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading chain {}", path.display()))?;
    let chain: Chain =
        serde_json::from_str(&text).with_context(|| format!("parsing chain {}", path.display()))?;
    Ok(chain)
}

pub fn load_denoiser(path: &Path) -> Result<Box<dyn Denoiser>> {
    let ckpt =
        read_denoiser(path).with_context(|| format!("reading denoiser {}", path.display()))?;
    Ok(ckpt.instantiate()?)
}

/// `--predictor` takes a checkpoint path or the literals `entropy` / `oracle`.
pub fn load_predictor(spec: &str) -> Result<ErrorPredictor> {
    match spec {
        "entropy" => Ok(ErrorPredictor::Entropy),
        "oracle" => Ok(ErrorPredictor::Oracle),
        path => Ok(read_predictor(Path::new(path))
            .with_context(|| format!("reading predictor {path}"))?
            .instantiate()?),
    }
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Where the oracle error predictor's per-sample reference comes from.
pub enum TruthSource {
    None,
    /// Sample `i` gets a fresh draw from the chain on its truth stream.
    Chain(Chain),
    /// Sample `i` is scored against dataset row `i`.
    Rows(Vec<Sequence>),
}

impl TruthSource {
    pub fn for_index(&self, cfg: &RunConfig, i: u64) -> Option<Sequence> {
        match self {
            TruthSource::None => None,
            TruthSource::Chain(chain) => {
                let mut rng = truth_rng(cfg, i);
                Some(chain.sample(cfg.sequence_length, &mut rng))
            }
            TruthSource::Rows(rows) => Some(rows[i as usize].clone()),
        }
    }

    /// Checks the source can cover `count` samples of the configured length.
    pub fn check_coverage(&self, cfg: &RunConfig, count: usize) -> Result<()> {
        if let TruthSource::Rows(rows) = self {
            if rows.len() < count {
                return Err(usage(format!(
                    "--truth-data has {} rows but --count is {count}",
                    rows.len()
                )));
            }
            if let Some(bad) = rows.iter().find(|r| r.len() != cfg.sequence_length) {
                return Err(usage(format!(
                    "--truth-data row length {} does not match --length {}",
                    bad.len(),
                    cfg.sequence_length
                )));
            }
        }
        Ok(())
    }
}

/// One dumped trajectory: JSON-lines, one record per sample, in order.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajRecord {
    pub sample: usize,
    pub alpha_s: Vec<f64>,
    pub states: Vec<Vec<Token>>,
    pub candidates: Vec<Vec<Token>>,
    pub remasked: Vec<Vec<usize>>,
}

impl TrajRecord {
    fn of(sample: usize, traj: &Trajectory) -> Self {
        TrajRecord {
            sample,
            alpha_s: traj.alpha_s.clone(),
            states: traj.states.iter().map(|s| s.tokens.clone()).collect(),
            candidates: traj.candidates.iter().map(|s| s.tokens.clone()).collect(),
            remasked: traj.remask_sets.clone(),
        }
    }

    fn into_trajectory(self) -> Trajectory {
        Trajectory {
            states: self.states.into_iter().map(Sequence::new).collect(),
            candidates: self.candidates.into_iter().map(Sequence::new).collect(),
            remask_sets: self.remasked,
            alpha_s: self.alpha_s,
        }
    }
}

pub fn write_traj(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    );
    for (i, traj) in trajs.iter().enumerate() {
        serde_json::to_writer(&mut f, &TrajRecord::of(i, traj))?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_traj(path: &Path) -> Result<Vec<Trajectory>> {
    let f = BufReader::new(
        std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
    );
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajRecord = serde_json::from_str(&line)
            .with_context(|| format!("parsing {}", path.display()))?;
        out.push(rec.into_trajectory());
    }
    Ok(out)
}

/// `(config_id, metric, value)` rows; floats print shortest-roundtrip, so
/// reruns are byte-identical.
pub fn write_metrics_csv(path: &Path, config_id: &str, rows: &[(String, f64)]) -> Result<()> {
    let mut out = String::from("config_id,metric,value\n");
    for (metric, value) in rows {
        out.push_str(&format!("{config_id},{metric},{value}\n"));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(())
}

/// Parent directory of a file path, created if needed.
pub fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir(parent)?;
        }
    }
    Ok(())
}
