//! Pinyin syllable lexicon, keystroke segmentation, abbreviation and
//! character-to-pinyin annotation.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.tsv");
const DEMO_DICT: &str = include_str!("../data/demo_dict.tsv");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PinyinError {
    #[error("cannot segment {input:?} at byte offset {offset}")]
    Unsegmentable { input: String, offset: usize },
    #[error("invalid pinyin input {input:?}: {reason}")]
    InvalidInput { input: String, reason: String },
    #[error("abbreviation needs complete pinyin, got {0:?} form")]
    NotComplete(PinyinForm),
    #[error("no pinyin reading for {0:?}")]
    UnknownCharacters(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PinyinForm {
    /// Every token is a full syllable.
    Complete,
    /// At least one token is a consonant initial standing in for a syllable.
    Abbreviated,
    /// Ends in letters that are only the beginning of a syllable.
    Prefix,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PinyinSequence {
    pub tokens: Vec<String>,
    pub form: PinyinForm,
}

impl PinyinSequence {
    pub fn complete(tokens: Vec<String>) -> Self {
        PinyinSequence {
            tokens,
            form: PinyinForm::Complete,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of letter keystrokes needed to type the sequence.
    pub fn letter_count(&self) -> usize {
        self.tokens.iter().map(String::len).sum()
    }
}

impl fmt::Display for PinyinSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

/// Legal syllables and their consonant initials.
#[derive(Clone, Debug)]
pub struct Lexicon {
    syllables: BTreeSet<String>,
    initials: HashMap<String, String>,
    initial_set: BTreeSet<String>,
    max_len: usize,
}

fn is_pinyin_word(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase())
}

impl Lexicon {
    /// Parses `syllable<TAB>initial` lines; the initial may be empty.
    pub fn from_tsv(text: &str) -> Result<Self, PinyinError> {
        let mut syllables = BTreeSet::new();
        let mut initials = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| PinyinError::Parse {
                line: i + 1,
                message,
            };
            let (syl, initial) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected syllable<TAB>initial".into()))?;
            if !is_pinyin_word(syl) {
                return Err(parse_err(format!("syllable {syl:?} is not [a-z]+")));
            }
            if !initial.is_empty() && (!is_pinyin_word(initial) || !syl.starts_with(initial)) {
                return Err(parse_err(format!("{initial:?} is not an initial of {syl:?}")));
            }
            syllables.insert(syl.to_string());
            initials.insert(syl.to_string(), initial.to_string());
        }
        Ok(Self::build(syllables, initials))
    }

    /// Builds a lexicon from bare syllables, deriving initials from the standard
    /// Mandarin consonant inventory.
    pub fn from_syllables<'a>(syllables: impl IntoIterator<Item = &'a str>) -> Self {
        const CONSONANTS: [&str; 23] = [
            "zh", "ch", "sh", "b", "p", "m", "f", "d", "t", "n", "l", "g", "k", "h", "j", "q",
            "x", "r", "z", "c", "s", "y", "w",
        ];
        let mut set = BTreeSet::new();
        let mut initials = HashMap::new();
        for s in syllables {
            let ini = CONSONANTS
                .iter()
                .find(|c| s.starts_with(**c) && s.len() > c.len())
                .copied()
                .unwrap_or("");
            set.insert(s.to_string());
            initials.insert(s.to_string(), ini.to_string());
        }
        Self::build(set, initials)
    }

    fn build(syllables: BTreeSet<String>, initials: HashMap<String, String>) -> Self {
        let initial_set = initials
            .values()
            .filter(|i| !i.is_empty())
            .cloned()
            .collect();
        let max_len = syllables.iter().map(String::len).max().unwrap_or(0);
        Lexicon {
            syllables,
            initials,
            initial_set,
            max_len,
        }
    }

    /// The bundled standard syllable table.
    pub fn standard() -> Self {
        Self::from_tsv(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn contains(&self, syllable: &str) -> bool {
        self.syllables.contains(syllable)
    }

    pub fn syllables(&self) -> impl Iterator<Item = &str> {
        self.syllables.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.syllables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.syllables.is_empty()
    }

    /// Consonant initial of `syllable`; empty for zero-initial syllables.
    pub fn initial(&self, syllable: &str) -> Option<&str> {
        self.initials.get(syllable).map(String::as_str)
    }

    pub fn is_initial(&self, s: &str) -> bool {
        self.initial_set.contains(s)
    }

    /// Abbreviated form of one syllable: its initial, or its first letter when it has none.
    pub fn abbreviation(&self, syllable: &str) -> String {
        match self.initial(syllable) {
            Some(ini) if !ini.is_empty() => ini.to_string(),
            _ => syllable.chars().next().map(String::from).unwrap_or_default(),
        }
    }

    fn is_syllable_prefix(&self, s: &str) -> bool {
        self.syllables
            .range::<str, _>((std::ops::Bound::Included(s), std::ops::Bound::Unbounded))
            .next()
            .is_some_and(|x| x.starts_with(s))
    }

    fn longest_syllable(&self, rest: &str) -> Option<usize> {
        (1..=self.max_len.min(rest.len()))
            .rev()
            .find(|&n| self.syllables.contains(&rest[..n]))
    }

    fn longest_initial(&self, rest: &str) -> Option<usize> {
        (1..=2.min(rest.len()))
            .rev()
            .find(|&n| self.initial_set.contains(&rest[..n]))
    }
}

fn check_letters(raw: &str) -> Result<(), PinyinError> {
    if raw.is_empty() {
        return Err(PinyinError::InvalidInput {
            input: raw.into(),
            reason: "empty input".into(),
        });
    }
    if let Some((i, c)) = raw.char_indices().find(|(_, c)| !c.is_ascii_lowercase()) {
        return Err(PinyinError::InvalidInput {
            input: raw.into(),
            reason: format!("unexpected {c:?} at offset {i}"),
        });
    }
    Ok(())
}

/// Greedy left-to-right longest-match segmentation into full syllables.
pub fn segment(raw: &str, lex: &Lexicon) -> Result<PinyinSequence, PinyinError> {
    check_letters(raw)?;
    let mut tokens = Vec::new();
    let mut pos = 0;
    while pos < raw.len() {
        let n = lex
            .longest_syllable(&raw[pos..])
            .ok_or_else(|| PinyinError::Unsegmentable {
                input: raw.into(),
                offset: pos,
            })?;
        tokens.push(raw[pos..pos + n].to_string());
        pos += n;
    }
    Ok(PinyinSequence::complete(tokens))
}

/// Segmentation of live keystrokes. Whitespace and `'` separate chunks; inside a chunk
/// full syllables win, then consonant initials (abbreviated input), and letters at the
/// very end that merely begin a syllable become a prefix token.
pub fn segment_input(raw: &str, lex: &Lexicon) -> Result<PinyinSequence, PinyinError> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(PinyinError::InvalidInput {
            input: raw.into(),
            reason: "empty input".into(),
        });
    }
    if let Some((i, c)) = raw
        .char_indices()
        .find(|&(_, c)| !(c.is_ascii_lowercase() || c == '\'' || c.is_ascii_whitespace()))
    {
        return Err(PinyinError::InvalidInput {
            input: raw.into(),
            reason: format!("unexpected {c:?} at offset {i}"),
        });
    }
    let mut tokens = Vec::new();
    let mut abbreviated = false;
    let mut prefix = false;
    let mut chunk_start = None;
    let bytes = raw.as_bytes();
    for i in 0..=raw.len() {
        let at_sep = i == raw.len() || bytes[i] == b'\'' || bytes[i].is_ascii_whitespace();
        match (at_sep, chunk_start) {
            (false, None) => chunk_start = Some(i),
            (true, Some(start)) => {
                chunk_start = None;
                let chunk = &raw[start..i];
                let last_chunk = raw[i..].trim_matches(|c: char| c == '\'' || c.is_whitespace()).is_empty();
                let mut pos = 0;
                while pos < chunk.len() {
                    let rest = &chunk[pos..];
                    if prefix {
                        return Err(PinyinError::Unsegmentable {
                            input: raw.into(),
                            offset: start + pos,
                        });
                    }
                    if let Some(n) = lex.longest_syllable(rest) {
                        tokens.push(rest[..n].to_string());
                        pos += n;
                    } else if let Some(n) = lex.longest_initial(rest) {
                        tokens.push(rest[..n].to_string());
                        abbreviated = true;
                        pos += n;
                    } else if last_chunk && lex.is_syllable_prefix(rest) {
                        tokens.push(rest.to_string());
                        prefix = true;
                        pos = chunk.len();
                    } else {
                        return Err(PinyinError::Unsegmentable {
                            input: raw.into(),
                            offset: start + pos,
                        });
                    }
                }
            }
            _ => {}
        }
    }
    let form = if prefix {
        PinyinForm::Prefix
    } else if abbreviated {
        PinyinForm::Abbreviated
    } else {
        PinyinForm::Complete
    };
    Ok(PinyinSequence { tokens, form })
}

/// Replaces every syllable by its consonant initial (first letter for zero-initial
/// syllables).
pub fn abbreviate(p: &PinyinSequence, lex: &Lexicon) -> Result<PinyinSequence, PinyinError> {
    if p.form != PinyinForm::Complete {
        return Err(PinyinError::NotComplete(p.form));
    }
    Ok(PinyinSequence {
        tokens: p.tokens.iter().map(|s| lex.abbreviation(s)).collect(),
        form: PinyinForm::Abbreviated,
    })
}

/// Whether `abbrev` can stand for `syllable`: it is the syllable's abbreviation or a
/// prefix of it.
pub fn match_abbrev(syllable: &str, abbrev: &str, lex: &Lexicon) -> bool {
    !abbrev.is_empty() && (lex.abbreviation(syllable) == abbrev || syllable.starts_with(abbrev))
}

/// Character readings with frequency weights.
#[derive(Clone, Debug, Default)]
pub struct CharPinyinDict {
    readings: HashMap<char, Vec<(String, f64)>>,
}

impl CharPinyinDict {
    /// Parses `char<TAB>syllable<TAB>weight` lines.
    pub fn from_tsv(text: &str) -> Result<Self, PinyinError> {
        let mut dict = CharPinyinDict::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| PinyinError::Parse {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [ch, syl, weight] = fields[..] else {
                return Err(parse_err("expected char<TAB>syllable<TAB>weight".into()));
            };
            let mut chars = ch.chars();
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(parse_err(format!("{ch:?} is not a single character")));
            };
            if !is_pinyin_word(syl) {
                return Err(parse_err(format!("syllable {syl:?} is not [a-z]+")));
            }
            let w: f64 = weight
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("bad weight {weight:?}")))?;
            if !(w > 0.0 && w.is_finite()) {
                return Err(parse_err(format!("weight must be positive, got {w}")));
            }
            dict.insert(c, syl, w);
        }
        Ok(dict)
    }

    /// The small bundled demo dictionary.
    pub fn demo() -> Self {
        Self::from_tsv(DEMO_DICT).expect("bundled dictionary is valid")
    }

    pub fn insert(&mut self, c: char, syllable: &str, weight: f64) {
        assert!(weight > 0.0, "weights must be positive");
        let list = self.readings.entry(c).or_default();
        match list.iter_mut().find(|(s, _)| s == syllable) {
            Some(entry) => entry.1 = weight,
            None => list.push((syllable.to_string(), weight)),
        }
    }

    pub fn readings(&self, c: char) -> Option<&[(String, f64)]> {
        self.readings.get(&c).map(Vec::as_slice)
    }

    /// Highest-weight reading, ties to the lexicographically smallest syllable.
    pub fn best_reading(&self, c: char) -> Option<&str> {
        self.readings
            .get(&c)?
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|(s, _)| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.readings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }
}

/// One syllable per character, by [`CharPinyinDict::best_reading`].
pub fn annotate(chars: &str, dict: &CharPinyinDict) -> Result<PinyinSequence, PinyinError> {
    let mut tokens = Vec::new();
    let mut unknown = String::new();
    for c in chars.chars() {
        match dict.best_reading(c) {
            Some(s) => tokens.push(s.to_string()),
            None if !unknown.contains(c) => unknown.push(c),
            None => {}
        }
    }
    if !unknown.is_empty() {
        return Err(PinyinError::UnknownCharacters(unknown));
    }
    Ok(PinyinSequence::complete(tokens))
}
