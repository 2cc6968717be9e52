//! Helpers shared by the integration tests.
#![allow(dead_code)]

use p2c_core::corpus::{Vocab, EOS};
use p2c_core::decode::{emittable, rank_order, Candidate, StepScorer};
use p2c_core::model::{build_variant, ModelConfig, P2CModel, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn vocab(n: usize, prefix: &str) -> Vocab {
    Vocab::from_tokens((0..n).map(|i| format!("{prefix}{i}"))).unwrap()
}

/// A small model with random shape and sharpened random weights: `targets` output
/// tokens plus EOS are emittable.
pub fn random_tiny_model(seed: u64, targets: usize) -> P2CModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variant = [Variant::Gated, Variant::SimpleConcat, Variant::Basic][rng.gen_range(0..3)];
    let d = rng.gen_range(2..=4);
    let cfg = ModelConfig {
        variant,
        pinyin_embed: d,
        target_embed: d,
        gru_hidden: d,
        lstm_layers: 1,
        lstm_cells: rng.gen_range(2..=4),
        ga_hops: rng.gen_range(1..=2),
        dropout: 0.0,
    };
    let mut m = build_variant(&cfg, vocab(3, "p"), vocab(targets, "c"), seed).unwrap();
    let gain = rng.gen_range(5.0..30.0);
    for p in m.params.iter_mut() {
        for v in p.value.data_mut() {
            *v *= gain;
        }
    }
    m
}

/// Every finished sequence of at most `max_len` tokens, best first.
pub fn exhaustive<S: StepScorer>(scorer: &mut S, max_len: usize) -> Result<Vec<Candidate>, S::Error> {
    fn walk<S: StepScorer>(scorer: &mut S, state: &S::State, prefix: &mut Vec<u32>, score: f64, max_len: usize, out: &mut Vec<Candidate>) -> Result<(), S::Error> {
        let prev = prefix.last().copied().unwrap_or(p2c_core::corpus::BOS);
        let (next, lp) = scorer.step(state, prev)?;
        out.push(Candidate {
            tokens: prefix.clone(),
            log_prob: score + lp[EOS as usize],
            finished: true,
        });
        if prefix.len() == max_len {
            return Ok(());
        }
        for (v, &l) in lp.iter().enumerate() {
            let v = v as u32;
            if v == EOS || !emittable(v) || l == f64::NEG_INFINITY {
                continue;
            }
            prefix.push(v);
            walk(scorer, &next, prefix, score + l, max_len, out)?;
            prefix.pop();
        }
        Ok(())
    }
    let start = scorer.start()?;
    let mut out = Vec::new();
    walk(scorer, &start, &mut Vec::new(), 0.0, max_len, &mut out)?;
    out.sort_by(|a, b| rank_order(a.log_prob, &a.tokens, b.log_prob, &b.tokens));
    Ok(out)
}
