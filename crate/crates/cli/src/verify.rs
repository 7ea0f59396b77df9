//! `verify`: the built-in check battery. One line per check, deterministic
//! across runs and worker counts; any failure exits with code 4.

use crate::util::{write_json, VerifyFailure};
use anyhow::Result;
use clap::Args;
use stardiff_core::verify::{run_battery, BATTERY_REFERENCE_RUNS};
use std::path::PathBuf;

#[derive(Args)]
pub struct VerifyArgs {
    /// Sample count for the statistical checks
    #[arg(long, default_value_t = BATTERY_REFERENCE_RUNS)]
    pub runs: u64,
    /// Also write the full table as JSON
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn run(args: VerifyArgs) -> Result<()> {
    let rows = run_battery(args.runs)?;
    let mut failures = 0usize;
    for row in &rows {
        let status = if row.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} {}/{}: {} = {:.6e} (tol {:.1e})",
            row.check, row.instance, row.metric, row.value, row.tolerance
        );
        if !row.pass {
            failures += 1;
        }
    }
    println!("{} checks, {failures} failures", rows.len());
    if let Some(path) = &args.report {
        write_json(path, &rows)?;
    }
    if failures > 0 {
        return Err(VerifyFailure(failures).into());
    }
    Ok(())
}
