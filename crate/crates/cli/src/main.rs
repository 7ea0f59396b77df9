//! Command-line front end for the masked-diffusion sampling toolkit.
//!
//! Exit codes: 0 success, 2 usage, 3 operational (bad config, budget,
//! split violations, IO), 4 verification failure.

mod eval;
mod gen;
mod sample;
mod sweep;
mod train;
mod util;
mod verify;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "stardiff", version, about = "Masked discrete diffusion samplers over toy corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic corpus from a Markov chain or the bracket language
    GenData(gen::GenDataArgs),
    /// Fit denoiser / error-predictor checkpoints
    #[command(subcommand)]
    Train(train::TrainCmd),
    /// Run a sampler config and persist samples under <out>/<config_id>/
    Sample(sample::SampleArgs),
    /// Score an existing run directory
    Eval(eval::EvalArgs),
    /// Grid one parameter, sampling and scoring every cell
    Sweep(sweep::SweepArgs),
    /// Run the built-in check battery
    Verify(verify::VerifyArgs),
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    util::init_worker_pool()?;
    match cli.command {
        Command::GenData(args) => gen::run(args),
        Command::Train(cmd) => train::run(cmd),
        Command::Sample(args) => sample::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Sweep(args) => sweep::run(args),
        Command::Verify(args) => verify::run(args),
    }
}

fn main() {
    if let Err(err) = dispatch(Cli::parse()) {
        eprintln!("error: {err:#}");
        std::process::exit(util::exit_code(&err));
    }
}
