//! Top-K MIU accuracy and keystroke scoring with a simulated typist.
//!
//! Every test sentence is one MIU. The typist types the pinyin of the chosen input mode,
//! then walks the top-10 list: the gold candidate at rank `r` costs `r - 1` navigation
//! keys and one selection. When the gold is absent, the typist commits the candidate
//! with the longest gold-matching prefix and converts the rest of the pinyin again.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::{Example, InputMode};
use crate::decode::{search_model, DecodeError, SearchOptions};
use crate::model::{ModelError, P2CModel};
use crate::pinyin::{abbreviate, Lexicon, PinyinError, PinyinForm};

/// Length of the candidate list the simulated typist inspects.
pub const LIST_LEN: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{predictions} prediction lists for {golds} gold sequences")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("K must be at least 1")]
    ZeroK,
    #[error("keystroke log is empty")]
    EmptyLog,
    #[error("keystroke log has zero actual keystrokes")]
    ZeroActual,
    #[error("sentence {index}: {source}")]
    Pinyin {
        index: usize,
        #[source]
        source: PinyinError,
    },
    #[error("sentence {index}: pinyin is not complete ({form:?})")]
    NotComplete { index: usize, form: PinyinForm },
    #[error("sentence {index}: {message}")]
    Convert { index: usize, message: String },
}

/// Share (×100) of sentences whose gold sequence is among the first `k` predictions.
pub fn miu_accuracy<T: PartialEq>(predictions: &[Vec<Vec<T>>], golds: &[Vec<T>], k: usize) -> Result<f64, MetricsError> {
    if predictions.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            golds: golds.len(),
        });
    }
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if golds.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions
        .iter()
        .zip(golds)
        .filter(|(list, gold)| list.iter().take(k).any(|c| c == *gold))
        .count();
    Ok(100.0 * hits as f64 / golds.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SentenceKeys {
    pub letters: usize,
    pub navigation: usize,
    pub selections: usize,
    /// Complete-pinyin letters plus one selection.
    pub ideal: usize,
}

impl SentenceKeys {
    pub fn actual(&self) -> usize {
        self.letters + self.navigation + self.selections
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct KeystrokeLog {
    pub sentences: Vec<SentenceKeys>,
}

impl KeystrokeLog {
    pub fn ideal(&self) -> usize {
        self.sentences.iter().map(|s| s.ideal).sum()
    }

    pub fn actual(&self) -> usize {
        self.sentences.iter().map(SentenceKeys::actual).sum()
    }
}

/// Σ ideal / Σ actual.
pub fn kyss(log: &KeystrokeLog) -> Result<f64, MetricsError> {
    if log.sentences.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let actual = log.actual();
    if actual == 0 {
        return Err(MetricsError::ZeroActual);
    }
    Ok(log.ideal() as f64 / actual as f64)
}

/// Anything producing a ranked candidate list of target tokens.
pub trait Converter {
    fn convert(&self, context: &[String], pinyin: &[String], k: usize) -> Result<Vec<Vec<String>>, String>;
}

/// Beam-search conversion with a trained model.
pub struct ModelConverter<'m> {
    pub model: &'m P2CModel,
    pub beam: usize,
}

impl Converter for ModelConverter<'_> {
    fn convert(&self, context: &[String], pinyin: &[String], k: usize) -> Result<Vec<Vec<String>>, String> {
        let m = self.model;
        let ctx = m.target_vocab.encode(context);
        let py = m.pinyin_vocab.encode(pinyin);
        let opts = SearchOptions::new(self.beam.max(k), k, py.len());
        let list = search_model(m, &ctx, &py, opts).map_err(|e: DecodeError<ModelError>| e.to_string())?;
        Ok(list.items.iter().map(|c| m.target_vocab.decode(&c.tokens)).collect())
    }
}

fn common_prefix(a: &[String], b: &[String]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Keystrokes for one sentence whose typed pinyin is `typed` and whose first
/// candidate list (top-10) is `first`.
fn type_sentence(
    conv: &dyn Converter,
    context: &[String],
    typed: &[String],
    gold: &[String],
    first: Vec<Vec<String>>,
    ideal: usize,
) -> Result<SentenceKeys, String> {
    let mut keys = SentenceKeys {
        letters: typed.iter().map(String::len).sum(),
        ideal,
        ..Default::default()
    };
    let aligned = typed.len() == gold.len();
    let mut done = 0;
    let mut list = first;
    loop {
        let rest = &gold[done..];
        if let Some(r) = list.iter().position(|c| c == rest) {
            keys.navigation += r;
            keys.selections += 1;
            return Ok(keys);
        }
        let best = list
            .iter()
            .enumerate()
            .map(|(r, c)| (common_prefix(c, rest), r))
            .filter(|&(n, _)| n > 0)
            .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        match best {
            Some((n, r)) if aligned => {
                keys.navigation += r;
                keys.selections += 1;
                done += n;
                list = conv.convert(context, &typed[done..], LIST_LEN)?;
            }
            _ => {
                keys.selections += rest.len();
                return Ok(keys);
            }
        }
    }
}

/// Runs the typist over `examples`, whose pinyin must be complete. In abbreviated mode
/// the typist types each syllable's abbreviation instead.
pub fn simulate_session(conv: &dyn Converter, examples: &[Example], mode: InputMode, lex: &Lexicon) -> Result<KeystrokeLog, MetricsError> {
    let mut log = KeystrokeLog::default();
    for (index, e) in examples.iter().enumerate() {
        let typed = typed_pinyin(e, mode, lex, index)?;
        let first = conv
            .convert(&e.context, &typed, LIST_LEN)
            .map_err(|message| MetricsError::Convert { index, message })?;
        let ideal = e.pinyin.letter_count() + 1;
        let keys = type_sentence(conv, &e.context, &typed, &e.target, first, ideal).map_err(|message| MetricsError::Convert { index, message })?;
        log.sentences.push(keys);
    }
    Ok(log)
}

fn typed_pinyin(e: &Example, mode: InputMode, lex: &Lexicon, index: usize) -> Result<Vec<String>, MetricsError> {
    if e.pinyin.form != PinyinForm::Complete {
        return Err(MetricsError::NotComplete { index, form: e.pinyin.form });
    }
    Ok(match mode {
        InputMode::Complete => e.pinyin.tokens.clone(),
        InputMode::Abbreviated => abbreviate(&e.pinyin, lex).map_err(|source| MetricsError::Pinyin { index, source })?.tokens,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub top_k_accuracy: BTreeMap<usize, f64>,
    pub kyss: f64,
    pub n_sentences: usize,
}

impl EvalResult {
    pub fn report(&self) -> String {
        let mut out = String::new();
        for (k, acc) in &self.top_k_accuracy {
            writeln!(out, "Top-{k}\t{acc:.2}").unwrap();
        }
        writeln!(out, "KySS\t{:.4}", self.kyss).unwrap();
        writeln!(out, "sentences\t{}", self.n_sentences).unwrap();
        out
    }
}

/// Top-K accuracies for every `k` in `ks` and KySS, from one conversion per sentence
/// plus whatever fallback rounds the typist needs.
pub fn evaluate(conv: &dyn Converter, examples: &[Example], mode: InputMode, ks: &[usize], lex: &Lexicon) -> Result<EvalResult, MetricsError> {
    if ks.contains(&0) {
        return Err(MetricsError::ZeroK);
    }
    let width = ks.iter().copied().chain([LIST_LEN]).max().unwrap();
    let mut lists = Vec::with_capacity(examples.len());
    let mut log = KeystrokeLog::default();
    for (index, e) in examples.iter().enumerate() {
        let typed = typed_pinyin(e, mode, lex, index)?;
        let convert_err = |message| MetricsError::Convert { index, message };
        let list = conv.convert(&e.context, &typed, width).map_err(convert_err)?;
        let first: Vec<Vec<String>> = list.iter().take(LIST_LEN).cloned().collect();
        let ideal = e.pinyin.letter_count() + 1;
        log.sentences.push(type_sentence(conv, &e.context, &typed, &e.target, first, ideal).map_err(convert_err)?);
        lists.push(list);
    }
    let golds: Vec<Vec<String>> = examples.iter().map(|e| e.target.clone()).collect();
    let mut top_k_accuracy = BTreeMap::new();
    for &k in ks {
        top_k_accuracy.insert(k, miu_accuracy(&lists, &golds, k)?);
    }
    Ok(EvalResult {
        top_k_accuracy,
        kyss: kyss(&log)?,
        n_sentences: examples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pinyin::PinyinSequence;
    use std::collections::HashMap;

    fn s(v: &str) -> Vec<String> {
        v.chars().map(String::from).collect()
    }

    /// Returns canned lists keyed by the pinyin it is asked about.
    struct Table(HashMap<Vec<String>, Vec<Vec<String>>>);

    impl Converter for Table {
        fn convert(&self, _: &[String], pinyin: &[String], k: usize) -> Result<Vec<Vec<String>>, String> {
            let list = self.0.get(pinyin).cloned().unwrap_or_default();
            Ok(list.into_iter().take(k).collect())
        }
    }

    fn example(py: &[&str], target: &str) -> Example {
        Example {
            context: Vec::new(),
            pinyin: PinyinSequence::complete(py.iter().map(|p| p.to_string()).collect()),
            target: s(target),
        }
    }

    fn tokens(py: &[&str]) -> Vec<String> {
        py.iter().map(|p| p.to_string()).collect()
    }

    #[test]
    fn miu_accuracy_examples() {
        let golds = vec![s("AB"), s("CD"), s("EF")];
        let preds = vec![vec![s("AB")], vec![s("XX"), s("CD")], vec![s("EF")]];
        let top1 = miu_accuracy(&preds, &golds, 1).unwrap();
        assert!((top1 - 200.0 / 3.0).abs() < 1e-9);
        assert_eq!(format!("{top1:.2}"), "66.67");
        assert_eq!(miu_accuracy(&preds, &golds, 10).unwrap(), 100.0);
        let empty = vec![vec![], vec![s("CD")], vec![s("EF")]];
        assert!((miu_accuracy(&empty, &golds, 5).unwrap() - 200.0 / 3.0).abs() < 1e-9);
        assert!(matches!(miu_accuracy(&preds[..2], &golds, 1), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(miu_accuracy(&preds, &golds, 0), Err(MetricsError::ZeroK)));
    }

    #[test]
    fn kyss_examples() {
        let one = |letters, navigation, selections, ideal| SentenceKeys {
            letters,
            navigation,
            selections,
            ideal,
        };
        let log = KeystrokeLog { sentences: vec![one(6, 2, 1, 7)] };
        assert!((kyss(&log).unwrap() - 7.0 / 9.0).abs() < 1e-12);
        let doubled = KeystrokeLog { sentences: vec![one(12, 4, 2, 14)] };
        assert_eq!(kyss(&log).unwrap(), kyss(&doubled).unwrap());
        assert!(matches!(kyss(&KeystrokeLog::default()), Err(MetricsError::EmptyLog)));
        assert!(matches!(kyss(&KeystrokeLog { sentences: vec![one(0, 0, 0, 0)] }), Err(MetricsError::ZeroActual)));
    }

    #[test]
    fn rank_three_costs_two_navigation_keys() {
        let e = example(&["ab", "cd", "ef"], "XYZ");
        let conv = Table(HashMap::from([(tokens(&["ab", "cd", "ef"]), vec![s("QQQ"), s("RRR"), s("XYZ")])]));
        let log = simulate_session(&conv, &[e], InputMode::Complete, &Lexicon::standard()).unwrap();
        assert_eq!(log.sentences[0], SentenceKeys { letters: 6, navigation: 2, selections: 1, ideal: 7 });
        assert_eq!(log.actual(), 9);
        assert!((kyss(&log).unwrap() - 7.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn fallback_commits_longest_prefix_then_continues() {
        let e = example(&["a", "b", "c"], "XYZ");
        let conv = Table(HashMap::from([
            (tokens(&["a", "b", "c"]), vec![s("XQQ"), s("XYQ")]),
            (tokens(&["c"]), vec![s("P"), s("Z")]),
        ]));
        let log = simulate_session(&conv, &[e], InputMode::Complete, &Lexicon::standard()).unwrap();
        // rank 2 for "XY", then rank 2 for "Z"
        assert_eq!(log.sentences[0], SentenceKeys { letters: 3, navigation: 2, selections: 2, ideal: 4 });
    }

    #[test]
    fn no_progress_falls_back_per_character() {
        let e = example(&["a", "b", "c"], "XYZ");
        let conv = Table(HashMap::from([(tokens(&["a", "b", "c"]), vec![s("QQQ")])]));
        let log = simulate_session(&conv, &[e], InputMode::Complete, &Lexicon::standard()).unwrap();
        assert_eq!(log.sentences[0], SentenceKeys { letters: 3, navigation: 0, selections: 3, ideal: 4 });
    }

    #[test]
    fn all_top1_complete_is_ideal() {
        let ex = vec![example(&["jin", "tian"], "今天"), example(&["tian", "qi"], "天气")];
        let conv = Table(HashMap::from([
            (tokens(&["jin", "tian"]), vec![s("今天"), s("金田")]),
            (tokens(&["tian", "qi"]), vec![s("天气")]),
        ]));
        let r = evaluate(&conv, &ex, InputMode::Complete, &[1, 5, 10], &Lexicon::standard()).unwrap();
        assert_eq!(r.kyss, 1.0);
        assert!(r.top_k_accuracy.values().all(|&a| a == 100.0));
        assert!(r.report().starts_with("Top-1\t100.00\nTop-5\t100.00\nTop-10\t100.00\nKySS\t1.0000\n"));
    }

    #[test]
    fn abbreviated_types_fewer_letters() {
        let ex = vec![example(&["jin", "tian"], "今天")];
        let conv = Table(HashMap::from([
            (tokens(&["jin", "tian"]), vec![s("今天")]),
            (tokens(&["j", "t"]), vec![s("今天")]),
        ]));
        let lex = Lexicon::standard();
        let full = simulate_session(&conv, &ex, InputMode::Complete, &lex).unwrap();
        let abbr = simulate_session(&conv, &ex, InputMode::Abbreviated, &lex).unwrap();
        assert!(abbr.sentences[0].letters < full.sentences[0].letters);
        assert_eq!(abbr.sentences[0].ideal, full.sentences[0].ideal);
    }

    #[test]
    fn abbreviated_input_is_rejected_as_source() {
        let mut e = example(&["j", "t"], "今天");
        e.pinyin.form = PinyinForm::Abbreviated;
        let conv = Table(HashMap::new());
        assert!(matches!(
            simulate_session(&conv, &[e], InputMode::Complete, &Lexicon::standard()),
            Err(MetricsError::NotComplete { index: 0, .. })
        ));
    }
}
