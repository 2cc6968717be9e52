mod common;

use std::collections::HashMap;

use p2c_core::corpus::{batchify, EncodedExample, Example, InputMode};
use p2c_core::decode::{beam_search, rank_order, replay_score, ModelScorer, SearchOptions};
use p2c_core::metrics::{kyss, miu_accuracy, simulate_session, Converter};
use p2c_core::model::gated_attention_values;
use p2c_core::numerics::{Graph, Tensor};
use p2c_core::pinyin::{abbreviate, segment_input, Lexicon, PinyinSequence};
use p2c_core::training::{lr_at, TrainConfig};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-4.0f64..4.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

const SYLLABLES: [&str; 10] = ["zhuang", "shi", "jin", "tian", "qi", "a", "er", "ou", "xiong", "lv"];

proptest! {
    #[test]
    fn vocab_round_trip(tokens in prop::collection::btree_set("[a-z]{1,4}", 1..20)) {
        let v = p2c_core::corpus::Vocab::from_tokens(tokens.iter().cloned()).unwrap();
        let list: Vec<String> = tokens.into_iter().collect();
        prop_assert_eq!(v.decode(&v.encode(&list)), list);
    }

    #[test]
    fn batches_cover_the_corpus(n in 1usize..40, bs in 1usize..9, seed in any::<u64>()) {
        let data: Vec<EncodedExample> = (0..n)
            .map(|i| EncodedExample { context: vec![5; i % 3], pinyin: vec![5; 1 + i % 4], target: vec![6; 1 + i % 4] })
            .collect();
        let batches = batchify(&data, bs, seed);
        prop_assert_eq!(batches.iter().map(|b| b.len()).sum::<usize>(), n);
        prop_assert!(batches.iter().all(|b| b.len() <= bs && !b.is_empty()));
    }

    #[test]
    fn softmax_rows_are_distributions(t in (1usize..5, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c))) {
        let mut g = Graph::new();
        let x = g.constant(t);
        let s = g.softmax(x);
        for row in g.value(s).to_rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn gated_attention_weights_are_distributions(
        (p, c) in (1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(lp, lc, d)| (matrix(lp, d), matrix(lc, d))),
        hops in 1usize..4,
    ) {
        let (x, weights) = gated_attention_values(&p, Some(&c), hops).unwrap();
        prop_assert_eq!(x.shape(), p.shape());
        prop_assert_eq!(weights.len(), hops);
        for w in &weights {
            for row in w.to_rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn schedule_is_nonincreasing(epochs in 1usize..30, halve in 0usize..30, lr0 in 0.01f64..5.0) {
        let cfg = TrainConfig { epochs, halve_after_epoch: halve.min(epochs), lr0, ..TrainConfig::default() };
        let lrs: Vec<f64> = (1..=epochs).map(|e| lr_at(e, &cfg).unwrap()).collect();
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(lrs[0], if cfg.halve_after_epoch == 0 { lr0 / 2.0 } else { lr0 });
    }

    #[test]
    fn abbreviation_shortens_and_resegments(idx in prop::collection::vec(0usize..SYLLABLES.len(), 1..6)) {
        let lex = Lexicon::standard();
        let full = PinyinSequence::complete(idx.iter().map(|&i| SYLLABLES[i].to_string()).collect());
        let abbr = abbreviate(&full, &lex).unwrap();
        prop_assert!(abbr.letter_count() <= full.letter_count());
        prop_assert_eq!(abbr.len(), full.len());
        let again = segment_input(&abbr.tokens.join(" "), &lex).unwrap();
        prop_assert_eq!(again.tokens, abbr.tokens);
        let joined = segment_input(&full.tokens.join("'"), &lex).unwrap();
        prop_assert_eq!(joined.tokens, full.tokens);
    }

    #[test]
    fn accuracy_is_monotone_in_k(hits in prop::collection::vec(prop::option::of(0usize..12), 1..30)) {
        let golds: Vec<Vec<u32>> = (0..hits.len() as u32).map(|i| vec![i]).collect();
        let preds: Vec<Vec<Vec<u32>>> = hits
            .iter()
            .enumerate()
            .map(|(i, h)| (0..12).map(|r| if Some(r) == *h { vec![i as u32] } else { vec![999] }).collect())
            .collect();
        let accs: Vec<f64> = (1..=12).map(|k| miu_accuracy(&preds, &golds, k).unwrap()).collect();
        prop_assert!(accs.windows(2).all(|w| w[0] <= w[1]));
        let expect = 100.0 * hits.iter().filter(|h| h.is_some()).count() as f64 / hits.len() as f64;
        prop_assert!((accs[11] - expect).abs() < 1e-9);
    }

    #[test]
    fn complete_input_kyss_at_most_one(ranks in prop::collection::vec(prop::option::of(0usize..10), 1..12)) {
        struct Ranked(HashMap<Vec<String>, Vec<Vec<String>>>);
        impl Converter for Ranked {
            fn convert(&self, _: &[String], pinyin: &[String], k: usize) -> Result<Vec<Vec<String>>, String> {
                Ok(self.0.get(pinyin).cloned().unwrap_or_default().into_iter().take(k).collect())
            }
        }
        let mut table = HashMap::new();
        let mut examples = Vec::new();
        for (i, r) in ranks.iter().enumerate() {
            let pinyin = vec![format!("ba{i}"), "da".to_string()];
            let target = vec![format!("T{i}"), "U".to_string()];
            let list = (0..10).map(|j| if Some(j) == *r { target.clone() } else { vec![format!("X{j}")] }).collect();
            table.insert(pinyin.clone(), list);
            examples.push(Example { context: vec![], pinyin: PinyinSequence::complete(pinyin), target });
        }
        let log = simulate_session(&Ranked(table), &examples, InputMode::Complete, &Lexicon::standard()).unwrap();
        let k = kyss(&log).unwrap();
        prop_assert!(k > 0.0 && k <= 1.0);
        prop_assert_eq!(k == 1.0, ranks.iter().all(|r| *r == Some(0)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn beam_lists_are_ranked_and_replayable(seed in any::<u64>(), beam in 1usize..6, len in 1usize..4) {
        let m = common::random_tiny_model(seed, 4);
        let pinyin: Vec<u32> = (0..len as u32).map(|i| 5 + i % 3).collect();
        let mut scorer = ModelScorer::new(&m, &[6, 5], &pinyin).unwrap();
        let k = beam.min(3);
        let list = beam_search(&mut scorer, SearchOptions::new(beam, k, len)).unwrap();
        prop_assert!(!list.items.is_empty() && list.items.len() <= k);
        for w in list.items.windows(2) {
            prop_assert!(rank_order(w[0].log_prob, &w[0].tokens, w[1].log_prob, &w[1].tokens).is_lt());
        }
        for c in &list.items {
            let replayed = replay_score(&mut scorer, c).unwrap();
            prop_assert!((replayed - c.log_prob).abs() < 1e-8);
        }
    }
}
