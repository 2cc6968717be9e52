//! Synthetic corpora with known answer keys.
//!
//! Both generators draw from a small homophone world: every syllable has one character
//! in column A and one in column B, and the column for a whole utterance is fixed by a
//! cue character in its context. Filler characters carry no information. All tokens
//! are single characters and all syllables are real pinyin, so the data also runs
//! through segmentation and character-level tokenization unchanged.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_vocab, encode_all, Example, Vocab};
use crate::pinyin::PinyinSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct World {
    pub syllables: usize,
    pub cues_per_class: usize,
    pub fillers: usize,
}

const SYLLABLES: [&str; 12] = ["ba", "da", "ga", "ma", "na", "la", "pa", "ta", "ka", "ha", "fa", "sa"];
const COLUMN_A: u32 = 0x4E00;
const COLUMN_B: u32 = 0x4E80;
const CUES_A: u32 = 0x4F00;
const CUES_B: u32 = 0x4F80;
const FILLERS: u32 = 0x5000;
const BLOCK: u32 = 0x80;

fn ch(base: u32, i: usize) -> String {
    char::from_u32(base + i as u32).expect("CJK block").to_string()
}

fn block_of(token: &str) -> Option<(u32, usize)> {
    let mut it = token.chars();
    let c = it.next()? as u32;
    if it.next().is_some() || !(COLUMN_A..FILLERS + BLOCK).contains(&c) {
        return None;
    }
    let base = COLUMN_A + (c - COLUMN_A) / BLOCK * BLOCK;
    Some((base, (c - base) as usize))
}

impl World {
    fn syllable(i: usize) -> String {
        SYLLABLES[i].to_string()
    }

    fn target(class_b: bool, i: usize) -> String {
        ch(if class_b { COLUMN_B } else { COLUMN_A }, i)
    }

    fn cue(class_b: bool, j: usize) -> String {
        ch(if class_b { CUES_B } else { CUES_A }, j)
    }

    fn filler(j: usize) -> String {
        ch(FILLERS, j)
    }

    /// Column of a target character: `Some(true)` for B.
    pub fn column_of(token: &str) -> Option<bool> {
        match block_of(token)?.0 {
            COLUMN_A => Some(false),
            COLUMN_B => Some(true),
            _ => None,
        }
    }

    /// Class of a cue character: `Some(true)` for B.
    pub fn cue_class(token: &str) -> Option<bool> {
        match block_of(token)?.0 {
            CUES_A => Some(false),
            CUES_B => Some(true),
            _ => None,
        }
    }

    fn example(&self, rng: &mut ChaCha8Rng, class_b: bool, cue: usize, syllables: &[usize]) -> Example {
        let mut context = Vec::new();
        if self.fillers > 0 && rng.gen_bool(0.5) {
            context.push(Self::filler(rng.gen_range(0..self.fillers)));
        }
        context.push(Self::cue(class_b, cue));
        if self.fillers > 0 && rng.gen_bool(0.5) {
            context.push(Self::filler(rng.gen_range(0..self.fillers)));
        }
        Example {
            context,
            pinyin: PinyinSequence::complete(syllables.iter().map(|&i| Self::syllable(i)).collect()),
            target: syllables.iter().map(|&i| Self::target(class_b, i)).collect(),
        }
    }

    /// Vocabularies covering every token the world can produce, in a fixed order.
    pub fn vocabs(&self) -> (Vocab, Vocab) {
        let pinyin = Vocab::from_tokens((0..self.syllables).map(Self::syllable)).expect("fresh tokens");
        let mut targets: Vec<String> = Vec::new();
        for b in [false, true] {
            targets.extend((0..self.syllables).map(|i| Self::target(b, i)));
        }
        for b in [false, true] {
            targets.extend((0..self.cues_per_class).map(|j| Self::cue(b, j)));
        }
        targets.extend((0..self.fillers).map(Self::filler));
        (pinyin, Vocab::from_tokens(targets).expect("fresh tokens"))
    }
}

/// Train and test splits plus the vocabularies built from the training split.
pub struct Benchmark {
    pub world: World,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub pinyin_vocab: Vocab,
    pub target_vocab: Vocab,
}

impl Benchmark {
    pub fn encoded_train(&self) -> Vec<crate::corpus::EncodedExample> {
        encode_all(&self.train, &self.pinyin_vocab, &self.target_vocab)
    }

    pub fn encoded_test(&self) -> Vec<crate::corpus::EncodedExample> {
        encode_all(&self.test, &self.pinyin_vocab, &self.target_vocab)
    }
}

fn random_syllables(rng: &mut ChaCha8Rng, n: usize, min: usize, max: usize) -> Vec<usize> {
    let len = rng.gen_range(min..=max);
    (0..len).map(|_| rng.gen_range(0..n)).collect()
}

/// A corpus for memorization: `n` examples, every class cue and syllable used.
pub fn overfit_corpus(n: usize, seed: u64) -> Benchmark {
    let world = World {
        syllables: 12,
        cues_per_class: 6,
        fillers: 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train: Vec<Example> = (0..n)
        .map(|_| {
            let b = rng.gen_bool(0.5);
            let cue = rng.gen_range(0..world.cues_per_class);
            let syl = random_syllables(&mut rng, world.syllables, 1, 3);
            world.example(&mut rng, b, cue, &syl)
        })
        .collect();
    let (pinyin_vocab, target_vocab) = build_vocab(&train, 1).expect("nonempty");
    Benchmark {
        world,
        train,
        test: Vec::new(),
        pinyin_vocab,
        target_vocab,
    }
}

/// Homophone disambiguation: the class of the single cue token in the context decides
/// every output character. The (cue, syllable) grid is split so that no pairing of a
/// cue with a syllable seen in a test example occurs anywhere in training.
pub fn disambiguation_benchmark(n_train: usize, n_test: usize, seed: u64) -> Benchmark {
    let world = World {
        syllables: 10,
        cues_per_class: 6,
        fillers: 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Held-out pairings: one in four cells of the (cue, syllable) grid per class.
    let mut held: HashSet<(bool, usize, usize)> = HashSet::new();
    for b in [false, true] {
        for cue in 0..world.cues_per_class {
            let mut syl: Vec<usize> = (0..world.syllables).collect();
            syl.shuffle(&mut rng);
            for &s in &syl[..world.syllables / 4] {
                held.insert((b, cue, s));
            }
        }
    }
    let draw = |rng: &mut ChaCha8Rng, want_held: bool| loop {
        let b = rng.gen_bool(0.5);
        let cue = rng.gen_range(0..world.cues_per_class);
        let syl = random_syllables(rng, world.syllables, 1, 2);
        let in_held = syl.iter().map(|&s| held.contains(&(b, cue, s)));
        let ok = if want_held { in_held.clone().all(|h| h) } else { !in_held.clone().any(|h| h) };
        if ok {
            return world.example(rng, b, cue, &syl);
        }
    };
    let train: Vec<Example> = (0..n_train).map(|_| draw(&mut rng, false)).collect();
    let test: Vec<Example> = (0..n_test).map(|_| draw(&mut rng, true)).collect();
    let (pinyin_vocab, target_vocab) = world.vocabs();
    Benchmark {
        world,
        train,
        test,
        pinyin_vocab,
        target_vocab,
    }
}

/// Index of the cue token in an example's context and whether it selects column B.
pub fn cue_of(e: &Example) -> Option<(usize, bool)> {
    e.context.iter().enumerate().find_map(|(i, t)| World::cue_class(t).map(|b| (i, b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_key_follows_the_cue() {
        let bench = disambiguation_benchmark(500, 100, 7);
        for e in bench.train.iter().chain(&bench.test) {
            let (_, b) = cue_of(e).unwrap();
            assert!(e.target.iter().all(|t| World::column_of(t) == Some(b)));
            assert_eq!(e.target.len(), e.pinyin.tokens.len());
            assert_eq!(e.context.iter().filter(|t| World::cue_class(t).is_some()).count(), 1);
        }
    }

    #[test]
    fn test_pairings_never_occur_in_training() {
        let bench = disambiguation_benchmark(500, 100, 7);
        let pairs = |e: &Example| -> Vec<(String, String)> {
            let cue = e.context[cue_of(e).unwrap().0].clone();
            e.pinyin.tokens.iter().map(|s| (cue.clone(), s.clone())).collect()
        };
        let seen: HashSet<_> = bench.train.iter().flat_map(pairs).collect();
        for e in &bench.test {
            assert!(pairs(e).iter().all(|p| !seen.contains(p)));
        }
    }

    #[test]
    fn sizes_and_vocab_bounds() {
        let o = overfit_corpus(200, 1);
        assert_eq!(o.train.len(), 200);
        assert!(o.target_vocab.len() <= 60 && o.pinyin_vocab.len() <= 60);
        let d = disambiguation_benchmark(500, 100, 1);
        assert_eq!((d.train.len(), d.test.len()), (500, 100));
        assert_eq!(d.encoded_test().iter().flat_map(|e| e.target.iter()).filter(|&&t| t == crate::corpus::UNK).count(), 0);
    }

    #[test]
    fn tokens_are_single_characters_and_real_pinyin() {
        let lex = crate::pinyin::Lexicon::standard();
        let o = overfit_corpus(200, 2);
        for e in &o.train {
            assert!(e.pinyin.tokens.iter().all(|p| lex.contains(p)));
            assert!(e.context.iter().chain(&e.target).all(|t| t.chars().count() == 1));
        }
        assert_eq!(World::column_of(&World::target(true, 3)), Some(true));
        assert_eq!(World::cue_class(&World::cue(false, 5)), Some(false));
        assert_eq!(World::cue_class(&World::filler(0)), None);
        assert_eq!(World::column_of("x"), None);
    }

    #[test]
    fn generators_are_seeded() {
        assert_eq!(disambiguation_benchmark(50, 10, 3).test, disambiguation_benchmark(50, 10, 3).test);
        assert_ne!(overfit_corpus(50, 3).train, overfit_corpus(50, 4).train);
    }
}
