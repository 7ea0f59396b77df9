//! Release gate: twelve independent checks, one test and one printed
//! pass/fail line each. The first seven pin exactness and statistical
//! agreement of the kernels; 8-11 pin the guided-sampling and evaluation
//! claims on desk-scale corpora; 12 pins byte determinism of the binary.

use stardiff_core::config::{RunConfig, SamplerFamily};
use stardiff_core::corpus::MarkovChain;
use stardiff_core::denoiser::{Denoiser, MarkovOracleDenoiser, TabularDenoiser};
use stardiff_core::error_predictor::{
    build_training_rows, loss_and_grad, roc_auc, train_logistic, ErrorPredictor, LogisticHyper,
    TrainRow,
};
use stardiff_core::eval::{diversity, oracle_gen_ppl};
use stardiff_core::noise::{
    corrupt, mdlm_step_dist, remdm_step_dist, star_step_dist, NoiseSchedule, ScheduleKind,
    SigmaKind,
};
use stardiff_core::rng::{stream_id, RngStream, StreamPurpose};
use stardiff_core::samplers::{
    gumbel_top_n, plan_steps, run_plan, run_trajectory, sample_rng, truth_rng, StepOp,
};
use stardiff_core::types::{Distribution, Sequence, Token, Vocab};
use stardiff_core::verify::{
    battery_family_configs, chain_distribution, chain_three_drift, chain_two_sticky,
    check_kl_closed_form, empirical_distribution, enumerate_sampler, star_vs_remdm_tv,
    DEFAULT_LEAF_BUDGET,
};
use stardiff_core::Chain;
use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

/// One printed line per check; failures panic after the line so the verdict
/// is visible either way.
fn conclude(num: u32, label: &str, started: Instant, failures: &[String]) {
    let verdict = if failures.is_empty() { "PASS" } else { "FAIL" };
    println!(
        "acceptance {num:02} {label}: {verdict} ({:.2}s)",
        started.elapsed().as_secs_f64()
    );
    assert!(failures.is_empty(), "{label}: {failures:?}");
}

fn check(failures: &mut Vec<String>, ok: bool, what: impl FnOnce() -> String) {
    if !ok {
        failures.push(what());
    }
}

fn within(failures: &mut Vec<String>, name: &str, value: f64, tol: f64) {
    check(failures, value <= tol, || {
        format!("{name} = {value:.6e} exceeds {tol:.1e}")
    });
}

fn runtime(failures: &mut Vec<String>, started: Instant, budget_secs: f64) {
    let secs = started.elapsed().as_secs_f64();
    check(failures, secs < budget_secs, || {
        format!("runtime {secs:.1}s exceeds {budget_secs}s")
    });
}

fn base_cfg(family: SamplerFamily, vocab: usize, len: usize, steps: usize, seed: u64) -> RunConfig {
    RunConfig {
        vocab: Vocab::new(vocab).expect("vocab"),
        sequence_length: len,
        total_steps: steps,
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

fn point_mass(k: usize, vocab: &Vocab) -> Distribution<f64> {
    let mut p = vec![0.0; vocab.n_entries()];
    p[k] = 1.0;
    Distribution::new(p).expect("point mass")
}

// ---- 1-7: kernel and distribution exactness ------------------------------

#[test]
fn c01_star_equals_remdm_at_matching_sigma() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let v = Vocab::new(2).unwrap();
    let mut worst = 0.0f64;
    for i in 1..=10 {
        for j in 1..=10 {
            let alpha_t = i as f64 / 11.0;
            let alpha_s = alpha_t + (1.0 - alpha_t) * j as f64 / 10.0;
            let sigma = 1.0 - alpha_s;
            for cand in [0 as Token, 1] {
                let phat = point_mass(cand as usize, &v);
                let star = star_step_dist(alpha_s, cand, &v);
                for from in [v.mask_id(), cand] {
                    let kernel = remdm_step_dist(from, alpha_t, alpha_s, sigma, &phat, &v)
                        .expect("sigma within its cap");
                    for e in 0..v.n_entries() {
                        worst = worst.max((star.get(e) - kernel.get(e)).abs());
                    }
                }
            }
        }
    }
    within(&mut failures, "kernel grid max dev", worst, 1e-15);

    for (name, chain) in [("2-state", chain_two_sticky()), ("3-state", chain_three_drift())] {
        let tv = star_vs_remdm_tv(&chain, 2, 1.0).expect("enumerable");
        within(&mut failures, &format!("{name} trajectory tv"), tv, 1e-12);
    }

    runtime(&mut failures, started, 5.0);
    conclude(1, "star-remdm-equivalence", started, &failures);
}

#[test]
fn c02_star_step_kl_matches_closed_form() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let mut rng = RngStream::seeded(23, stream_id(StreamPurpose::Check, 1));
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let size = 2 + trial % 3;
        let v = Vocab::new(size).unwrap();
        let alpha_s = rng.uniform();
        let raw: Vec<f64> = (0..size).map(|_| rng.uniform() + 1e-6).collect();
        let total: f64 = raw.iter().sum();
        let mut probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let spill = 1.0 - probs.iter().sum::<f64>();
        probs[0] += spill;
        probs.push(0.0);
        let phat = Distribution::new(probs).unwrap();
        let k = rng.uniform_index(size) as Token;
        let (kl, formula) = check_kl_closed_form(alpha_s, k, &phat, &v).expect("valid triple");
        worst = worst.max((kl - formula).abs());
    }
    within(&mut failures, "max |KL - formula|", worst, 1e-10);

    runtime(&mut failures, started, 1.0);
    conclude(2, "kl-closed-form", started, &failures);
}

#[test]
fn c03_sigma_zero_collapses_to_plain_unmasking() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let v = Vocab::new(3).unwrap();
    let mut rng = RngStream::seeded(17, stream_id(StreamPurpose::Check, 0));
    let mut worst = 0.0f64;
    for i in 0..10 {
        for j in 0..10 {
            let alpha_t = i as f64 / 10.0;
            let alpha_s = alpha_t + (1.0 - alpha_t) * (j as f64 + 1.0) / 10.0;
            let raw: Vec<f64> = (0..3).map(|_| rng.uniform() + 1e-3).collect();
            let total: f64 = raw.iter().sum();
            let mut probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let spill = 1.0 - probs.iter().sum::<f64>();
            probs[0] += spill;
            probs.push(0.0);
            let phat = Distribution::new(probs).unwrap();
            if alpha_t < 1.0 {
                let a = mdlm_step_dist(v.mask_id(), alpha_t, alpha_s, &phat, &v).unwrap();
                let b = remdm_step_dist(v.mask_id(), alpha_t, alpha_s, 0.0, &phat, &v).unwrap();
                for e in 0..v.n_entries() {
                    worst = worst.max((a.get(e) - b.get(e)).abs());
                }
            }
            let carry = point_mass(1, &v);
            let a = mdlm_step_dist(1, alpha_t, alpha_s, &carry, &v).unwrap();
            let b = remdm_step_dist(1, alpha_t, alpha_s, 0.0, &carry, &v).unwrap();
            for e in 0..v.n_entries() {
                worst = worst.max((a.get(e) - b.get(e)).abs());
            }
        }
    }
    check(&mut failures, worst == 0.0, || {
        format!("kernel grid dev {worst:.3e}, want exact equality")
    });

    let mdlm_cfg = base_cfg(SamplerFamily::Mdlm, 2, 12, 8, 11);
    let remdm_cfg = RunConfig {
        sampler: SamplerFamily::Remdm,
        sigma: SigmaKind::Cap,
        eta: 0.0,
        ..mdlm_cfg.clone()
    };
    let den = MarkovOracleDenoiser::new(chain_two_sticky());
    let states_of = |cfg: &RunConfig, idx: u64| -> Vec<u8> {
        let traj = run_plan(
            cfg,
            &plan_steps(cfg).unwrap(),
            &den,
            None,
            None,
            &mut sample_rng(cfg, idx),
        )
        .unwrap();
        let tokens: Vec<&[Token]> = traj.states.iter().map(|s| s.tokens.as_slice()).collect();
        serde_json::to_vec(&tokens).unwrap()
    };
    let mismatches = (0..50)
        .filter(|&idx| states_of(&mdlm_cfg, idx) != states_of(&remdm_cfg, idx))
        .count();
    check(&mut failures, mismatches == 0, || {
        format!("{mismatches}/50 same-seed trajectories differ")
    });

    runtime(&mut failures, started, 1.0);
    conclude(3, "sigma-zero-degeneration", started, &failures);
}

#[test]
fn c04_single_unmask_steps_reproduce_the_chain() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let chain = chain_two_sticky();
    let cfg = base_cfg(SamplerFamily::Mdlm, 2, 3, 3, 13);
    let plan = vec![
        StepOp::UnmaskOne { t: 1.0 },
        StepOp::UnmaskOne { t: 2.0 / 3.0 },
        StepOp::UnmaskOne { t: 1.0 / 3.0 },
    ];
    let den = MarkovOracleDenoiser::new(chain.clone());
    let got = enumerate_sampler(&cfg, &plan, &den, None, None, DEFAULT_LEAF_BUDGET).unwrap();
    let want = chain_distribution(&chain, 3).unwrap();
    within(&mut failures, "tv to the chain", got.tv(&want), 1e-9);
    within(
        &mut failures,
        "enumerated mass dev",
        (got.total() - 1.0).abs(),
        1e-10,
    );

    runtime(&mut failures, started, 10.0);
    conclude(4, "chain-rule-exactness", started, &failures);
}

#[test]
fn c05_every_family_simulates_its_enumerated_distribution() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let den = MarkovOracleDenoiser::new(chain_two_sticky());
    let entropy = ErrorPredictor::Entropy;
    for cfg in battery_family_configs() {
        let predictor = cfg.sampler.is_guided().then_some(&entropy);
        let plan = plan_steps(&cfg).unwrap();
        let exact =
            enumerate_sampler(&cfg, &plan, &den, predictor, None, DEFAULT_LEAF_BUDGET).unwrap();
        let empirical =
            empirical_distribution(&cfg, &plan, &den, predictor, None, 200_000).unwrap();
        let name = format!("{:?} tv", cfg.sampler);
        within(&mut failures, &name, exact.tv(&empirical), 0.01);
    }

    runtime(&mut failures, started, 60.0);
    conclude(5, "enumeration-vs-simulation", started, &failures);
}

#[test]
fn c06_half_alpha_masks_half_the_positions() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let chain = chain_two_sticky();
    let v = chain.vocab();
    let x0 = chain.sample(
        10_000,
        &mut RngStream::seeded(31, stream_id(StreamPurpose::Data, 0)),
    );
    let mut rng = RngStream::seeded(31, stream_id(StreamPurpose::Check, 2));
    let x_t = corrupt(&x0, 0.5, &v, &BTreeSet::new(), &mut rng);
    let frac = x_t.count_masked(&v) as f64 / 10_000.0;
    within(&mut failures, "|masked fraction - 0.5|", (frac - 0.5).abs(), 0.02);

    conclude(6, "forward-marginal", started, &failures);
}

#[test]
fn c07_gumbel_top_n_matches_its_limits() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let mut rng = RngStream::seeded(37, stream_id(StreamPurpose::Check, 3));
    let mismatches = (0..1000)
        .filter(|_| {
            let len = 1 + rng.uniform_index(8);
            // Coarse levels make ties frequent, so the tie-break rule is hit.
            let logits: Vec<f64> = (0..len)
                .map(|_| 0.5 * rng.uniform_index(5) as f64)
                .collect();
            let n = rng.uniform_index(len + 1);
            let got = gumbel_top_n(&logits, 0.0, n, &mut rng).unwrap();
            let mut order: Vec<usize> = (0..len).collect();
            order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
            let mut want = order[..n].to_vec();
            want.sort_unstable();
            got != want
        })
        .count();
    check(&mut failures, mismatches == 0, || {
        format!("{mismatches}/1000 zero-temperature draws differ from sorted top-n")
    });

    let draws = 100_000;
    let first = (0..draws)
        .filter(|_| gumbel_top_n(&[1.0, 0.0], 1.0, 1, &mut rng).unwrap()[0] == 0)
        .count();
    let freq = first as f64 / draws as f64;
    let want = 1.0f64.exp() / (1.0 + 1.0f64.exp());
    within(&mut failures, "softmax frequency dev", (freq - want).abs(), 0.005);

    conclude(7, "gumbel-top-n", started, &failures);
}

// ---- 8-11: guided sampling and evaluation on desk-scale corpora ----------

/// 4-state chain that cycles hard (0.9 to the next state); strong local
/// structure gives the error predictor a learnable signal.
fn cycle_chain() -> Chain {
    let mut rows = Vec::new();
    for i in 0..4 {
        let mut row = vec![0.025; 4];
        row[i] = 0.05;
        row[(i + 1) % 4] = 0.9;
        rows.push(row);
    }
    MarkovChain::new(vec![0.25; 4], rows).expect("stochastic fixture")
}

fn corpus(chain: &Chain, rows: usize, len: usize, seed: u64) -> Vec<Sequence> {
    (0..rows)
        .map(|i| {
            chain.sample(
                len,
                &mut RngStream::for_purpose(seed, StreamPurpose::Data, i as u64),
            )
        })
        .collect()
}

/// The shared training pipeline: a deliberately under-trained denoiser on a
/// small prefix, the logistic error predictor on the untouched remainder
/// with its own tail quarter held out for validation.
struct Fitted {
    denoiser: TabularDenoiser,
    predictor: ErrorPredictor,
    auc: f64,
    carry_over_positives: usize,
}

fn fit_pipeline(data: &[Sequence], vocab: Vocab, denoiser_rows: usize) -> Fitted {
    let sched = NoiseSchedule::new(ScheduleKind::Linear, 1).unwrap();
    let denoiser = TabularDenoiser::fit(
        &data[..denoiser_rows],
        vocab,
        &sched,
        0.5,
        4,
        &mut RngStream::for_purpose(0, StreamPurpose::DenoiserFit, 0),
    )
    .unwrap();

    let rest = &data[denoiser_rows..];
    let eval_n = rest.len() / 4;
    let (train, eval) = rest.split_at(rest.len() - eval_n);
    let rows = build_training_rows(
        train,
        &denoiser,
        &sched,
        2,
        &mut RngStream::for_purpose(0, StreamPurpose::PredictorRows, 0),
    )
    .unwrap();
    let (model, _) = train_logistic(&rows, &LogisticHyper::default()).unwrap();

    let eval_rows = build_training_rows(
        eval,
        &denoiser,
        &sched,
        1,
        &mut RngStream::for_purpose(0, StreamPurpose::PredictorRows, 1),
    )
    .unwrap();
    let scores: Vec<f64> = eval_rows.iter().map(|r| model.score(&r.features)).collect();
    let labels: Vec<bool> = eval_rows.iter().map(|r| r.label).collect();
    let auc = roc_auc(&scores, &labels).expect("both classes present");
    let carry_over_positives = rows
        .iter()
        .chain(&eval_rows)
        .filter(|r| !r.fresh && r.label)
        .count();
    Fitted {
        denoiser,
        predictor: ErrorPredictor::Logistic(model),
        auc,
        carry_over_positives,
    }
}

fn loop_cfg(family: SamplerFamily, steps: usize, seed: u64) -> RunConfig {
    RunConfig {
        loop_fraction: 0.25,
        tau_remask: 2.0,
        ..base_cfg(family, 4, 16, steps, seed)
    }
}

/// Oracle generative PPL of one 256-sample run.
fn run_ppl(
    cfg: &RunConfig,
    chain: &Chain,
    denoiser: &dyn Denoiser,
    predictor: Option<&ErrorPredictor>,
    oracle_truths: bool,
) -> f64 {
    let finals: Vec<Sequence> = (0..256)
        .map(|i| {
            let truth = oracle_truths
                .then(|| chain.sample(cfg.sequence_length, &mut truth_rng(cfg, i)));
            run_trajectory(
                cfg,
                denoiser,
                predictor,
                truth.as_ref(),
                &mut sample_rng(cfg, i),
            )
            .unwrap()
            .final_state()
            .clone()
        })
        .collect();
    oracle_gen_ppl(chain, &finals).unwrap().ppl
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn standard_error(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

#[test]
fn c08_guided_remasking_beats_unguided_at_matched_budget() {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let started = Instant::now();
    let mut failures = Vec::new();

    let chain = cycle_chain();
    let data = corpus(&chain, 2000, 16, 42);
    let fitted = fit_pipeline(&data, chain.vocab(), 300);

    for steps in [16usize, 32] {
        let seeds: Vec<u64> = (0..10).collect();
        let unguided: Vec<f64> = seeds
            .iter()
            .map(|&s| {
                let cfg = loop_cfg(SamplerFamily::Loop, steps, s);
                run_ppl(&cfg, &chain, &fitted.denoiser, None, false)
            })
            .collect();
        let guided: Vec<f64> = seeds
            .iter()
            .map(|&s| {
                let cfg = loop_cfg(SamplerFamily::GstarLoop, steps, s);
                run_ppl(&cfg, &chain, &fitted.denoiser, Some(&fitted.predictor), false)
            })
            .collect();
        let oracle_guided: Vec<f64> = seeds
            .iter()
            .map(|&s| {
                let cfg = loop_cfg(SamplerFamily::GstarLoop, steps, s);
                run_ppl(&cfg, &chain, &fitted.denoiser, Some(&ErrorPredictor::Oracle), true)
            })
            .collect();

        let diffs: Vec<f64> = unguided
            .iter()
            .zip(&guided)
            .map(|(u, g)| u - g)
            .collect();
        let t = mean(&diffs) / standard_error(&diffs);
        let df = (diffs.len() - 1) as f64;
        let p = 1.0 - StudentsT::new(0.0, 1.0, df).unwrap().cdf(t);
        check(&mut failures, mean(&diffs) > 0.0 && p < 0.01, || {
            format!("T={steps}: learned-predictor gap t={t:.2}, one-sided p={p:.2e} (need < 0.01)")
        });

        let oracle_gap = mean(&unguided) - mean(&oracle_guided);
        let se = standard_error(&unguided);
        check(&mut failures, oracle_gap >= 3.0 * se, || {
            format!("T={steps}: oracle gap {oracle_gap:.4} < 3 x unguided SE {se:.4}")
        });
        println!(
            "  T={steps}: paired t={t:.2} (p={p:.1e}), oracle gap {:.1}x unguided SE",
            oracle_gap / se
        );
    }

    runtime(&mut failures, started, 300.0);
    conclude(8, "guided-beats-unguided", started, &failures);
}

#[test]
fn c09_handover_time_sweep_has_an_interior_winner() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_chain_json(dir.join("chain.json"), &cycle_chain());
    run_bin(
        dir,
        &[],
        &[
            "gen-data", "--kind", "markov", "--chain", "chain.json", "--vocab", "4", "--length",
            "16", "--count", "2000", "--seed", "42", "--out", "data.jsonl",
        ],
    );
    run_bin(
        dir,
        &[],
        &[
            "train", "denoiser", "--data", "data.jsonl", "--vocab", "4", "--range", "0:300",
            "--out", "den.json",
        ],
    );
    run_bin(
        dir,
        &[],
        &[
            "sweep", "--param", "t_on", "--family", "hybrid", "--length", "16", "--steps", "16",
            "--seed", "1", "--count", "512", "--denoiser", "den.json", "--chain", "chain.json",
            "--out", "sw",
        ],
    );

    let csv = std::fs::read_to_string(dir.join("sw/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|&h| h == name).unwrap();
    let (value_col, ppl_col, winner_col) = (col("value"), col("oracle_ppl"), col("winner"));
    let mut winner: Option<(f64, f64)> = None;
    let mut endpoints: Vec<(f64, f64)> = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let value: f64 = fields[value_col].parse().unwrap();
        let ppl: f64 = fields[ppl_col].parse().unwrap();
        if fields[winner_col] == "true" {
            check(&mut failures, winner.is_none(), || {
                "sweep flagged more than one winner".into()
            });
            winner = Some((value, ppl));
        }
        if value == 0.0 || value == 1.0 {
            endpoints.push((value, ppl));
        }
    }
    let (win_t, win_ppl) = winner.expect("sweep flags a winner");
    check(&mut failures, endpoints.len() == 2, || {
        format!("expected both endpoints in the grid, saw {endpoints:?}")
    });
    check(&mut failures, win_t > 0.0 && win_t < 1.0, || {
        format!("winner t_on={win_t} is not interior")
    });
    for (t_on, ppl) in &endpoints {
        check(&mut failures, win_ppl < *ppl, || {
            format!("winner ppl {win_ppl:.4} not below t_on={t_on} ppl {ppl:.4}")
        });
    }
    println!(
        "  winner t_on={win_t} at ppl {win_ppl:.4} vs endpoints {:.4} / {:.4}",
        endpoints[0].1, endpoints[1].1
    );

    conclude(9, "hybrid-interior-optimum", started, &failures);
}

#[test]
fn c10_error_predictor_is_learnable_on_held_out_rows() {
    let started = Instant::now();
    let mut failures = Vec::new();

    // Threshold derivation: this exact pipeline (400 rows of the 2-state
    // sticky chain, denoiser on the first 100) produced AUC 0.9197 on its
    // first run; 0.75 is frozen as the floor.
    let chain = chain_two_sticky();
    let data = corpus(&chain, 400, 16, 42);
    let fitted = fit_pipeline(&data, chain.vocab(), 100);
    check(&mut failures, fitted.auc >= 0.75, || {
        format!("held-out AUC {:.4} below the 0.75 floor", fitted.auc)
    });
    check(&mut failures, fitted.carry_over_positives == 0, || {
        format!(
            "{} carried-over positions labelled as errors",
            fitted.carry_over_positives
        )
    });
    println!("  measured held-out AUC {:.4}", fitted.auc);

    conclude(10, "error-predictor-learnability", started, &failures);
}

#[test]
fn c11_metric_implementations_are_exact() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let constant = Sequence::new(vec![0; 5]);
    let div = diversity(&constant).unwrap();
    within(&mut failures, "|diversity - 1/24|", (div - 1.0 / 24.0).abs(), 1e-12);

    let chain = chain_two_sticky();
    let ppl = oracle_gen_ppl(&chain, &[Sequence::new(vec![0, 0, 0])])
        .unwrap()
        .ppl;
    let want = (0.9039f64 / 3.0).exp();
    within(&mut failures, "|ppl - exp(0.9039/3)|", (ppl - want).abs(), 1e-3);

    let mut rng = RngStream::seeded(7, stream_id(StreamPurpose::Check, 4));
    let dim = 6;
    let rows: Vec<TrainRow> = (0..24)
        .map(|i| TrainRow {
            features: (0..dim).map(|_| 2.0 * rng.uniform() - 1.0).collect(),
            label: i % 3 == 0,
            fresh: true,
        })
        .collect();
    let w: Vec<f64> = (0..dim).map(|_| 2.0 * rng.uniform() - 1.0).collect();
    let pos_weight = 1.7;
    let (_, grad) = loss_and_grad(&w, &rows, pos_weight);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for d in 0..dim {
        let mut plus = w.clone();
        plus[d] += h;
        let mut minus = w.clone();
        minus[d] -= h;
        let numeric =
            (loss_and_grad(&plus, &rows, pos_weight).0 - loss_and_grad(&minus, &rows, pos_weight).0)
                / (2.0 * h);
        worst = worst.max((grad[d] - numeric).abs());
    }
    within(&mut failures, "max gradient dev from finite differences", worst, 1e-6);

    conclude(11, "metric-exactness", started, &failures);
}

// ---- 12: binary determinism ----------------------------------------------

fn run_bin(dir: &Path, envs: &[(&str, &str)], args: &[&str]) -> Vec<u8> {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_stardiff"));
    cmd.current_dir(dir).args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary spawns");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn write_chain_json(path: std::path::PathBuf, chain: &Chain) {
    std::fs::write(path, serde_json::to_string(chain).unwrap()).unwrap();
}

/// Every file under `dir`, relative path -> content.
fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn c12_verify_sample_and_sweep_are_byte_deterministic() {
    let started = Instant::now();
    let mut failures = Vec::new();

    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_chain_json(dir.join("chain.json"), &chain_two_sticky());
    run_bin(
        dir,
        &[],
        &[
            "gen-data", "--kind", "markov", "--chain", "chain.json", "--vocab", "2", "--length",
            "8", "--count", "200", "--seed", "7", "--out", "data.jsonl",
        ],
    );
    run_bin(
        dir,
        &[],
        &[
            "train", "denoiser", "--data", "data.jsonl", "--vocab", "2", "--range", "0:120",
            "--out", "den.json",
        ],
    );
    run_bin(
        dir,
        &[],
        &[
            "train", "predictor", "--data", "data.jsonl", "--denoiser", "den.json", "--out",
            "pred.json",
        ],
    );

    let worker_envs: [&[(&str, &str)]; 3] = [
        &[("STARDIFF_WORKERS", "1")],
        &[("STARDIFF_WORKERS", "1")],
        &[("STARDIFF_WORKERS", "8")],
    ];

    let verify: Vec<(Vec<u8>, Vec<u8>)> = (0..3)
        .map(|i| {
            let report = format!("report{i}.json");
            let stdout = run_bin(dir, worker_envs[i], &["verify", "--report", &report]);
            (stdout, std::fs::read(dir.join(report)).unwrap())
        })
        .collect();
    check(
        &mut failures,
        verify.iter().all(|v| *v == verify[0]),
        || "verify output differs across runs or worker counts".into(),
    );

    let samples: Vec<_> = (0..3)
        .map(|i| {
            let out = format!("run{i}");
            run_bin(
                dir,
                worker_envs[i],
                &[
                    "sample", "--family", "gstar-loop", "--length", "8", "--steps", "16",
                    "--seed", "5", "--denoiser", "den.json", "--predictor", "pred.json",
                    "--count", "64", "--dump-traj", "--out", &out,
                ],
            );
            dir_snapshot(&dir.join(out))
        })
        .collect();
    check(
        &mut failures,
        samples.iter().all(|s| *s == samples[0]),
        || "sample run dirs differ across runs or worker counts".into(),
    );

    let sweeps: Vec<_> = (0..3)
        .map(|i| {
            let out = format!("sw{i}");
            run_bin(
                dir,
                worker_envs[i],
                &[
                    "sweep", "--param", "t_on", "--values", "0,0.5,1", "--family", "hybrid",
                    "--length", "8", "--steps", "8", "--seed", "3", "--denoiser", "den.json",
                    "--chain", "chain.json", "--count", "32", "--out", &out,
                ],
            );
            dir_snapshot(&dir.join(out))
        })
        .collect();
    check(
        &mut failures,
        sweeps.iter().all(|s| *s == sweeps[0]),
        || "sweep artifacts differ across runs or worker counts".into(),
    );

    conclude(12, "determinism", started, &failures);
}
