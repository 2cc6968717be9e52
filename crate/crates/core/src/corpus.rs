//! Context-paired pinyin/character training data.
//!
//! Each utterance becomes one [`Example`] whose context is the previous utterance of
//! the same document. Vocabularies reserve ids 0..=4 for PAD, UNK, BOS, EOS and the
//! BC separator used by the concatenation model.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pinyin::{self, CharPinyinDict, Lexicon, PinyinError, PinyinForm, PinyinSequence};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const BC: u32 = 4;

pub const RESERVED: [&str; 5] = ["<pad>", "<unk>", "<s>", "</s>", "<bc>"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("document {document}, utterance {utterance}: {source}")]
    Annotation {
        document: usize,
        utterance: usize,
        source: PinyinError,
    },
    #[error("empty corpus")]
    Empty,
    #[error("corpus line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid vocabulary: {0}")]
    Vocab(String),
}

/// How typed pinyin is presented to the converter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Complete,
    Abbreviated,
}

/// Unit of the character-side token stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// One token per character.
    #[default]
    Char,
    /// Whitespace-separated words from pre-segmented text.
    Word,
}

impl Granularity {
    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Granularity::Char => text
                .chars()
                .filter(|c| !c.is_whitespace())
                .map(String::from)
                .collect(),
            Granularity::Word => text.split_whitespace().map(String::from).collect(),
        }
    }

    pub fn join(self, tokens: &[String]) -> String {
        match self {
            Granularity::Char => tokens.concat(),
            Granularity::Word => tokens.join(" "),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CorpusOptions {
    pub granularity: Granularity,
    /// Number of previous utterances used as context: 0 or 1.
    pub context_window: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            granularity: Granularity::Char,
            context_window: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub context: Vec<String>,
    pub pinyin: PinyinSequence,
    pub target: Vec<String>,
}

/// Builds one example per utterance, pairing it with the previous utterance of the
/// same document.
pub fn build_parallel(
    documents: &[Vec<String>],
    dict: &CharPinyinDict,
    lex: &Lexicon,
    mode: InputMode,
    opts: CorpusOptions,
) -> Result<Vec<Example>, CorpusError> {
    let mut out = Vec::new();
    for (d, doc) in documents.iter().enumerate() {
        let mut previous: Vec<String> = Vec::new();
        for (u, utt) in doc.iter().enumerate() {
            let err = |source| CorpusError::Annotation {
                document: d,
                utterance: u,
                source,
            };
            let chars: String = utt.chars().filter(|c| !c.is_whitespace()).collect();
            let mut py = pinyin::annotate(&chars, dict).map_err(err)?;
            if mode == InputMode::Abbreviated {
                py = pinyin::abbreviate(&py, lex).map_err(err)?;
            }
            let target = opts.granularity.tokenize(utt);
            let context = if opts.context_window == 0 {
                Vec::new()
            } else {
                previous.clone()
            };
            out.push(Example {
                context,
                pinyin: py,
                target: target.clone(),
            });
            previous = target;
        }
    }
    Ok(out)
}

/// Share of examples whose target shares at least one token with its context.
pub fn relativity(examples: &[Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let related = examples
        .iter()
        .filter(|e| {
            let ctx: HashSet<&String> = e.context.iter().collect();
            e.target.iter().any(|t| ctx.contains(t))
        })
        .count();
    related as f64 / examples.len() as f64
}

/// Token/id bijection with fixed reserved ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new()).expect("reserved tokens are distinct")
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = CorpusError;

    fn try_from(all: Vec<String>) -> Result<Self, CorpusError> {
        if all.len() < RESERVED.len() || all.iter().zip(RESERVED).any(|(a, b)| a != b) {
            return Err(CorpusError::Vocab(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        Self::from_tokens(all.into_iter().skip(RESERVED.len()))
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Reserved tokens followed by `tokens` in the given order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = impl Into<String>>) -> Result<Self, CorpusError> {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(tokens.into_iter().map(Into::into)) {
            if v.index.contains_key(&t) {
                return Err(CorpusError::Vocab(format!("duplicate token {t:?}")));
            }
            v.index.insert(t.clone(), v.tokens.len() as u32);
            v.tokens.push(t);
        }
        Ok(v)
    }

    /// Tokens seen at least `min_count` times, most frequent first, ties lexicographic.
    pub fn from_counts(counts: &HashMap<String, usize>, min_count: usize) -> Self {
        let mut kept: Vec<(&String, usize)> = counts
            .iter()
            .filter(|(t, &c)| c >= min_count && !RESERVED.contains(&t.as_str()))
            .map(|(t, &c)| (t, c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t.clone())).expect("counts keys are unique")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or UNK.
    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK as usize]).to_string())
            .collect()
    }
}

/// Builds the pinyin vocabulary and the character-side vocabulary. The latter covers
/// every token seen as a target or as context.
pub fn build_vocab(examples: &[Example], min_count: usize) -> Result<(Vocab, Vocab), CorpusError> {
    if examples.is_empty() {
        return Err(CorpusError::Empty);
    }
    let min_count = min_count.max(1);
    let mut py = HashMap::new();
    let mut tgt = HashMap::new();
    for e in examples {
        for t in &e.pinyin.tokens {
            *py.entry(t.clone()).or_insert(0) += 1;
        }
        for t in e.target.iter().chain(&e.context) {
            *tgt.entry(t.clone()).or_insert(0) += 1;
        }
    }
    Ok((Vocab::from_counts(&py, min_count), Vocab::from_counts(&tgt, min_count)))
}

/// An [`Example`] mapped to vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub context: Vec<u32>,
    pub pinyin: Vec<u32>,
    pub target: Vec<u32>,
}

impl EncodedExample {
    pub fn new(e: &Example, pinyin_vocab: &Vocab, target_vocab: &Vocab) -> Self {
        EncodedExample {
            context: target_vocab.encode(&e.context),
            pinyin: pinyin_vocab.encode(&e.pinyin.tokens),
            target: target_vocab.encode(&e.target),
        }
    }
}

pub fn encode_all(examples: &[Example], pinyin_vocab: &Vocab, target_vocab: &Vocab) -> Vec<EncodedExample> {
    examples
        .iter()
        .map(|e| EncodedExample::new(e, pinyin_vocab, target_vocab))
        .collect()
}

/// Row-major id matrix padded with PAD after each row's true length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedIds {
    pub width: usize,
    pub ids: Vec<u32>,
    pub lengths: Vec<usize>,
}

impl PaddedIds {
    pub fn from_rows(rows: &[&[u32]]) -> Self {
        let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(rows.len() * width);
        for r in rows {
            ids.extend_from_slice(r);
            ids.extend(std::iter::repeat_n(PAD, width - r.len()));
        }
        PaddedIds {
            width,
            ids,
            lengths: rows.iter().map(|r| r.len()).collect(),
        }
    }

    /// The unpadded ids of row `i`.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.ids[i * self.width..i * self.width + self.lengths[i]]
    }

    pub fn rows(&self) -> usize {
        self.lengths.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub context: PaddedIds,
    pub pinyin: PaddedIds,
    pub target: PaddedIds,
}

impl Batch {
    pub fn from_examples(examples: &[&EncodedExample]) -> Self {
        let col = |f: fn(&EncodedExample) -> &[u32]| {
            PaddedIds::from_rows(&examples.iter().map(|e| f(e)).collect::<Vec<_>>())
        };
        Batch {
            context: col(|e| &e.context),
            pinyin: col(|e| &e.pinyin),
            target: col(|e| &e.target),
        }
    }

    pub fn len(&self) -> usize {
        self.pinyin.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of predicted target positions, counting EOS.
    pub fn target_tokens(&self) -> usize {
        self.target.lengths.iter().map(|l| l + 1).sum()
    }
}

/// Shuffles deterministically under `seed` and cuts into batches; the last may be short.
pub fn batchify(examples: &[EncodedExample], batch_size: usize, seed: u64) -> Vec<Batch> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
        .chunks(batch_size)
        .map(|idx| Batch::from_examples(&idx.iter().map(|&i| &examples[i]).collect::<Vec<_>>()))
        .collect()
}

/// Serializes examples as `context<TAB>pinyin<TAB>target` lines.
pub fn write_corpus(examples: &[Example], granularity: Granularity) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&granularity.join(&e.context));
        out.push('\t');
        out.push_str(&e.pinyin.tokens.join(" "));
        out.push('\t');
        out.push_str(&granularity.join(&e.target));
        out.push('\n');
    }
    out
}

/// Parses the corpus format. Pinyin tokens that are not full syllables of `lex` mark
/// the example as abbreviated.
pub fn read_corpus(text: &str, granularity: Granularity, lex: &Lexicon) -> Result<Vec<Example>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: &str| CorpusError::Parse {
            line: i + 1,
            message: message.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [context, py, target] = fields[..] else {
            return Err(parse_err("expected context<TAB>pinyin<TAB>target"));
        };
        let tokens: Vec<String> = py.split_whitespace().map(String::from).collect();
        if tokens.is_empty() {
            return Err(parse_err("empty pinyin field"));
        }
        let target = granularity.tokenize(target);
        if target.is_empty() {
            return Err(parse_err("empty target field"));
        }
        let form = if tokens.iter().all(|t| lex.contains(t)) {
            PinyinForm::Complete
        } else {
            PinyinForm::Abbreviated
        };
        out.push(Example {
            context: granularity.tokenize(context),
            pinyin: PinyinSequence { tokens, form },
            target,
        });
    }
    Ok(out)
}
