//! Beam search over decoder steps, producing the ranked candidate list.

use std::cmp::Ordering;

use serde::Serialize;

use crate::corpus::{BC, BOS, EOS, PAD, UNK};
use crate::model::{DecoderState, EncodedSource, ModelError, P2CModel, Pass};

/// Incremental next-token scorer driven by the search.
pub trait StepScorer {
    type State: Clone;
    type Error;

    fn start(&mut self) -> Result<Self::State, Self::Error>;

    /// Log-probabilities over the whole target vocabulary after `prev`.
    fn step(&mut self, state: &Self::State, prev: u32) -> Result<(Self::State, Vec<f64>), Self::Error>;
}

/// Tokens the search never emits: padding, unknown, start and separator.
pub fn emittable(id: u32) -> bool {
    !matches!(id, PAD | UNK | BOS | BC)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    /// Output tokens without the closing EOS.
    pub tokens: Vec<u32>,
    /// Sum of per-step log-probabilities, EOS included when finished.
    pub log_prob: f64,
    pub finished: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CandidateList {
    pub items: Vec<Candidate>,
    pub beam: usize,
    pub k: usize,
    /// No hypothesis reached EOS within the length limit; `items` holds the best
    /// unfinished one.
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SearchOptions {
    pub beam: usize,
    pub k: usize,
    /// Most output tokens before EOS.
    pub max_len: usize,
}

impl SearchOptions {
    pub fn new(beam: usize, k: usize, source_len: usize) -> Self {
        SearchOptions {
            beam,
            k,
            max_len: default_max_len(source_len),
        }
    }
}

pub fn default_max_len(source_len: usize) -> usize {
    2 * source_len + 5
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError<E> {
    #[error("need beam >= k >= 1, got beam {beam}, k {k}")]
    Options { beam: usize, k: usize },
    #[error(transparent)]
    Scorer(E),
}

/// Ranking order: higher score first, then shorter (earlier EOS), then smaller ids.
pub fn rank_order(a_score: f64, a: &[u32], b_score: f64, b: &[u32]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then(a.len().cmp(&b.len()))
        .then_with(|| a.cmp(b))
}

struct Hyp<S> {
    tokens: Vec<u32>,
    score: f64,
    state: S,
}

/// Standard beam search without length normalization.
///
/// Zero-probability expansions are never kept.
/// Each step expands every live hypothesis by every emittable token and keeps the best
/// `beam` expansions; those ending in EOS move to the finished set. The search stops
/// once no live hypothesis can outrank the k-th finished one, or after `max_len + 1`
/// steps.
pub fn beam_search<S: StepScorer>(scorer: &mut S, opts: SearchOptions) -> Result<CandidateList, DecodeError<S::Error>> {
    let SearchOptions { beam, k, max_len } = opts;
    if k == 0 || beam < k {
        return Err(DecodeError::Options { beam, k });
    }
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        state: scorer.start().map_err(DecodeError::Scorer)?,
    }];
    let mut finished: Vec<Candidate> = Vec::new();
    for step in 0..=max_len {
        // (parent, token, score, tokens without EOS)
        let mut expansions: Vec<(usize, u32, f64, Vec<u32>)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (i, h) in live.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let (state, log_probs) = scorer.step(&h.state, prev).map_err(DecodeError::Scorer)?;
            states.push(state);
            for (v, lp) in log_probs.iter().enumerate() {
                let v = v as u32;
                let score = h.score + lp;
                if !emittable(v) || (step == max_len && v != EOS) || score == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                if v != EOS {
                    tokens.push(v);
                }
                expansions.push((i, v, score, tokens));
            }
        }
        expansions.sort_by(|a, b| rank_order(a.2, &a.3, b.2, &b.3));
        expansions.truncate(beam);

        let mut next = Vec::with_capacity(expansions.len());
        for (p, v, score, tokens) in expansions {
            if v == EOS {
                finished.push(Candidate {
                    tokens,
                    log_prob: score,
                    finished: true,
                });
            } else {
                next.push(Hyp {
                    tokens,
                    score,
                    state: states[p].clone(),
                });
            }
        }
        if next.is_empty() {
            break;
        }
        live = next;
        finished.sort_by(|a, b| rank_order(a.log_prob, &a.tokens, b.log_prob, &b.tokens));
        if finished.len() >= k && live[0].score <= finished[k - 1].log_prob {
            break;
        }
    }
    finished.sort_by(|a, b| rank_order(a.log_prob, &a.tokens, b.log_prob, &b.tokens));
    finished.truncate(k);
    let truncated = finished.is_empty();
    if truncated {
        if let Some(best) = live.into_iter().next() {
            finished.push(Candidate {
                tokens: best.tokens,
                log_prob: best.score,
                finished: false,
            });
        }
    }
    Ok(CandidateList {
        items: finished,
        beam,
        k,
        truncated,
    })
}

/// Argmax token per step until EOS or `max_len` tokens; ties go to the smaller id.
pub fn greedy<S: StepScorer>(scorer: &mut S, max_len: usize) -> Result<Candidate, S::Error> {
    let mut state = scorer.start()?;
    let mut tokens = Vec::new();
    let mut score = 0.0;
    for step in 0..=max_len {
        let prev = tokens.last().copied().unwrap_or(BOS);
        let (next, log_probs) = scorer.step(&state, prev)?;
        let best = log_probs
            .iter()
            .enumerate()
            .filter(|&(v, &lp)| emittable(v as u32) && (step < max_len || v as u32 == EOS) && lp > f64::NEG_INFINITY)
            .fold(None, |acc: Option<(usize, f64)>, (v, &lp)| match acc {
                Some((_, b)) if b >= lp => acc,
                _ => Some((v, lp)),
            });
        let Some((v, lp)) = best else { break };
        score += lp;
        if v as u32 == EOS {
            return Ok(Candidate {
                tokens,
                log_prob: score,
                finished: true,
            });
        }
        tokens.push(v as u32);
        state = next;
    }
    Ok(Candidate {
        tokens,
        log_prob: score,
        finished: false,
    })
}

/// Scorer backed by a model and one encoded source. All steps share one graph.
pub struct ModelScorer<'m> {
    model: &'m P2CModel,
    pass: Pass,
    enc: EncodedSource,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m P2CModel, context: &[u32], pinyin: &[u32]) -> Result<Self, ModelError> {
        let mut pass = Pass::eval();
        let context = if model.variant().uses_context() { context } else { &[] };
        let enc = model.encode_source(&mut pass, context, pinyin)?;
        Ok(ModelScorer { model, pass, enc })
    }
}

impl StepScorer for ModelScorer<'_> {
    type State = DecoderState;
    type Error = ModelError;

    fn start(&mut self) -> Result<DecoderState, ModelError> {
        self.model.init_decoder(&mut self.pass, &self.enc)
    }

    fn step(&mut self, state: &DecoderState, prev: u32) -> Result<(DecoderState, Vec<f64>), ModelError> {
        let out = self.model.decode_step(&mut self.pass, state, prev, &self.enc)?;
        let lp = self.pass.graph.value(out.log_probs).data().to_vec();
        Ok((out.state, lp))
    }
}

/// Beam search for one (context, pinyin) id pair.
pub fn search_model(model: &P2CModel, context: &[u32], pinyin: &[u32], opts: SearchOptions) -> Result<CandidateList, DecodeError<ModelError>> {
    let mut scorer = ModelScorer::new(model, context, pinyin).map_err(DecodeError::Scorer)?;
    beam_search(&mut scorer, opts)
}

pub fn greedy_model(model: &P2CModel, context: &[u32], pinyin: &[u32], max_len: usize) -> Result<Candidate, ModelError> {
    let mut scorer = ModelScorer::new(model, context, pinyin)?;
    greedy(&mut scorer, max_len)
}

/// Sum of log-probabilities of `tokens ++ [EOS]` (or just `tokens` when unfinished)
/// obtained by replaying the scorer.
pub fn replay_score<S: StepScorer>(scorer: &mut S, c: &Candidate) -> Result<f64, S::Error> {
    let mut state = scorer.start()?;
    let mut prev = BOS;
    let mut score = 0.0;
    let tail = c.finished.then_some(EOS);
    for &t in c.tokens.iter().chain(tail.iter()) {
        let (next, lp) = scorer.step(&state, prev)?;
        score += lp[t as usize];
        state = next;
        prev = t;
    }
    Ok(score)
}
