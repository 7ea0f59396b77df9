//! Brute-force Bayes cross-check of the forward-backward posterior: for
//! every possible evidence pattern, condition the full enumeration of clean
//! sequences and compare marginals position by position.

use stardiff_core::denoiser::{Denoiser, MarkovOracleDenoiser};
use stardiff_core::types::{Sequence, Token};
use stardiff_core::verify::{chain_three_drift, chain_two_sticky};
use stardiff_core::Chain;

fn brute_force_check(chain: &Chain, len: usize) {
    let v = chain.vocab();
    let den = MarkovOracleDenoiser::new(chain.clone());
    let size = v.size();

    // All clean sequences with their chain probabilities.
    let mut cleans: Vec<(Vec<Token>, f64)> = Vec::new();
    let total = size.pow(len as u32);
    for code in 0..total {
        let mut c = code;
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            tokens.push((c % size) as Token);
            c /= size;
        }
        let mut p = chain.pi()[tokens[0] as usize];
        for w in tokens.windows(2) {
            p *= chain.row(w[0] as usize)[w[1] as usize];
        }
        cleans.push((tokens, p));
    }

    // All evidence patterns: each position is a real token or the mask.
    let n_symbols = size + 1;
    let patterns = n_symbols.pow(len as u32);
    for code in 0..patterns {
        let mut c = code;
        let mut ev = Vec::with_capacity(len);
        for _ in 0..len {
            let s = c % n_symbols;
            c /= n_symbols;
            ev.push(if s == size { v.mask_id() } else { s as Token });
        }
        let evidence = Sequence::new(ev);

        let consistent: Vec<&(Vec<Token>, f64)> = cleans
            .iter()
            .filter(|(tokens, _)| {
                tokens
                    .iter()
                    .zip(&evidence.tokens)
                    .all(|(&t, &e)| v.is_mask(e) || t == e)
            })
            .collect();
        let z: f64 = consistent.iter().map(|(_, p)| p).sum();
        assert!(z > 0.0, "fixture chains have full support");

        let out = den.denoise(&evidence, 0.5).expect("posterior exists");
        for i in 0..len {
            let mut want = vec![0.0; v.n_entries()];
            if v.is_mask(evidence.tokens[i]) {
                for (tokens, p) in &consistent {
                    want[tokens[i] as usize] += p / z;
                }
            } else {
                want[evidence.tokens[i] as usize] = 1.0;
            }
            for (e, want_e) in want.iter().enumerate() {
                let got = out.per_position[i].get(e);
                assert!(
                    (got - want_e).abs() < 1e-12,
                    "pattern {:?} position {i} entry {e}: {got} vs {want_e}",
                    evidence.tokens,
                );
            }
        }
    }
}

#[test]
fn two_state_length_three_posteriors_match_bayes_on_all_27_patterns() {
    brute_force_check(&chain_two_sticky(), 3);
}

#[test]
fn three_state_length_two_posteriors_match_bayes_on_all_16_patterns() {
    brute_force_check(&chain_three_drift(), 2);
}
