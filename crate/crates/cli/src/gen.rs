//! `gen-data`: synthetic corpora written as JSON-lines datasets, each with a
//! sibling `*.spec.json` recording exactly how it was generated.

use crate::util::{ensure_parent, load_chain, usage, write_json};
use anyhow::Result;
use clap::{Args, ValueEnum};
use serde::Serialize;
use stardiff_core::corpus::{write_dataset, DyckSource};
use stardiff_core::rng::{RngStream, StreamPurpose};
use stardiff_core::types::Sequence;
use stardiff_core::Chain;
use std::path::PathBuf;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusKind {
    Markov,
    Dyck,
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub kind: CorpusKind,
    /// Real-symbol vocabulary size. Markov infers it from the chain; dyck
    /// needs it explicitly (2 * pairs + 1).
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Tokens per sequence
    #[arg(long)]
    pub length: usize,
    /// Number of sequences
    #[arg(long)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    /// Markov chain JSON: {"pi": [...], "A": [[...], ...]}
    #[arg(long)]
    pub chain: Option<PathBuf>,
    /// Dyck nesting-depth bound
    #[arg(long, default_value_t = 4)]
    pub max_depth: usize,
    /// Dataset file; the generating spec lands next to it as *.spec.json
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything needed to regenerate a dataset byte-for-byte.
#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum GenSpec<'a> {
    Markov {
        vocab: usize,
        length: usize,
        count: usize,
        seed: u64,
        chain: &'a Chain,
    },
    Dyck {
        vocab: usize,
        pairs: usize,
        max_depth: usize,
        length: usize,
        count: usize,
        seed: u64,
    },
}

fn data_rng(seed: u64, index: usize) -> RngStream {
    RngStream::for_purpose(seed, StreamPurpose::Data, index as u64)
}

pub fn run(args: GenDataArgs) -> Result<()> {
    if let Some(v) = args.vocab {
        if v < 2 {
            return Err(usage(format!("--vocab must be at least 2, got {v}")));
        }
    }
    if args.length == 0 {
        return Err(usage("--length must be positive"));
    }

    let (seqs, spec): (Vec<Sequence>, serde_json::Value) = match args.kind {
        CorpusKind::Markov => {
            let path = args
                .chain
                .as_ref()
                .ok_or_else(|| usage("--kind markov needs --chain"))?;
            let chain = load_chain(path)?;
            if let Some(v) = args.vocab {
                if v != chain.size() {
                    return Err(usage(format!(
                        "--vocab {v} does not match the {}-state chain",
                        chain.size()
                    )));
                }
            }
            let seqs = (0..args.count)
                .map(|i| chain.sample(args.length, &mut data_rng(args.seed, i)))
                .collect();
            let spec = serde_json::to_value(GenSpec::Markov {
                vocab: chain.size(),
                length: args.length,
                count: args.count,
                seed: args.seed,
                chain: &chain,
            })?;
            (seqs, spec)
        }
        CorpusKind::Dyck => {
            if args.chain.is_some() {
                return Err(usage("--chain applies to --kind markov, not dyck"));
            }
            let vocab = args
                .vocab
                .ok_or_else(|| usage("--kind dyck needs --vocab (2 * pairs + 1)"))?;
            if vocab < 3 || vocab % 2 == 0 {
                return Err(usage(format!(
                    "dyck vocab must be odd and at least 3 (2 * pairs + 1), got {vocab}"
                )));
            }
            let source = DyckSource::new((vocab - 1) / 2, args.max_depth, args.length)?;
            let seqs = (0..args.count)
                .map(|i| source.sample(&mut data_rng(args.seed, i)))
                .collect();
            let spec = serde_json::to_value(GenSpec::Dyck {
                vocab,
                pairs: (vocab - 1) / 2,
                max_depth: args.max_depth,
                length: args.length,
                count: args.count,
                seed: args.seed,
            })?;
            (seqs, spec)
        }
    };

    ensure_parent(&args.out)?;
    write_dataset(&args.out, &seqs)?;
    write_json(&args.out.with_extension("spec.json"), &spec)?;
    println!("wrote {} sequences to {}", seqs.len(), args.out.display());
    Ok(())
}
