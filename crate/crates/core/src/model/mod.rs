//! Sequence-to-sequence pinyin-to-character models.
//!
//! All three variants share the BiLSTM encoder and the global-attention LSTM decoder;
//! they differ only in how the source rows fed to the encoder are produced:
//!
//! * [`Variant::Basic`] embeds the pinyin tokens.
//! * [`Variant::SimpleConcat`] embeds `context ++ [BC] ++ pinyin` from one shared table.
//! * [`Variant::Gated`] runs a BiGRU over the pinyin and another over the context,
//!   gates the pinyin rows with [`gated_attention`], and projects the result to the
//!   encoder input width.
//!
//! The output layer is tied to the target embedding table.

mod attention;
pub mod checkpoint;
mod config;
mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Batch, Granularity, Vocab, BC, BOS, EOS};
use crate::numerics::{Graph, NumericError, ParamId, ParamStore, Tensor, Var};

pub use attention::{gated_attention, gated_attention_values, GatedAttention};
pub use config::{ModelConfig, Variant};

use layers::{Bi, GruIds, Init, LstmIds};

/// Parameters are initialized uniformly in `[-INIT_SCALE, INIT_SCALE]`, except
/// embedding tables, which use `[-EMBED_INIT_SCALE, EMBED_INIT_SCALE]`.
pub const INIT_SCALE: f64 = 0.08;
pub const EMBED_INIT_SCALE: f64 = 1.0;

/// Added inside the square root when rescaling context rows to unit RMS.
pub const GA_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("empty {0} sequence")]
    Empty(&'static str),
    #[error("unsupported for {variant} model: {what}")]
    Unsupported { variant: Variant, what: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("embedding file line {line}: {message}")]
    Embeddings { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which BiGRU to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Pinyin,
    Context,
}

#[derive(Clone, Copy, Debug)]
struct Bridge {
    h_w: ParamId,
    h_b: ParamId,
    c_w: ParamId,
    c_b: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    emb_pinyin: Option<ParamId>,
    emb_source: Option<ParamId>,
    emb_target: ParamId,
    gru_pinyin: Option<Bi<GruIds>>,
    gru_context: Option<Bi<GruIds>>,
    ga_proj: Option<(ParamId, ParamId)>,
    encoder: Vec<Bi<LstmIds>>,
    bridge: Vec<Bridge>,
    decoder: Vec<LstmIds>,
    attn_w: ParamId,
    attn_out_w: ParamId,
    attn_out_b: ParamId,
    out_b: ParamId,
}

impl Layout {
    fn register(cfg: &ModelConfig, pinyin_vocab: usize, target_vocab: usize, store: &mut ParamStore, init: &mut Init) -> Self {
        let (dp, dt, h, n) = (cfg.pinyin_embed, cfg.target_embed, cfg.gru_hidden, cfg.lstm_cells);
        let mut layout = Layout {
            emb_pinyin: None,
            emb_source: None,
            emb_target: init.add_scaled(store, "emb.target", &[target_vocab, dt], EMBED_INIT_SCALE),
            gru_pinyin: None,
            gru_context: None,
            ga_proj: None,
            encoder: Vec::new(),
            bridge: Vec::new(),
            decoder: Vec::new(),
            attn_w: ParamId(0),
            attn_out_w: ParamId(0),
            attn_out_b: ParamId(0),
            out_b: ParamId(0),
        };
        match cfg.variant {
            Variant::Basic => {
                layout.emb_pinyin = Some(init.add_scaled(store, "emb.pinyin", &[pinyin_vocab, dp], EMBED_INIT_SCALE));
            }
            Variant::SimpleConcat => {
                layout.emb_source = Some(init.add_scaled(store, "emb.source", &[pinyin_vocab + target_vocab, dp], EMBED_INIT_SCALE));
            }
            Variant::Gated => {
                layout.emb_pinyin = Some(init.add_scaled(store, "emb.pinyin", &[pinyin_vocab, dp], EMBED_INIT_SCALE));
                let mut bigru = |name: &str, input| Bi {
                    fwd: GruIds::register(store, &format!("gru.{name}.fwd"), input, h, init),
                    bwd: GruIds::register(store, &format!("gru.{name}.bwd"), input, h, init),
                };
                layout.gru_pinyin = Some(bigru("pinyin", dp));
                layout.gru_context = Some(bigru("context", dt));
                layout.ga_proj = Some((
                    init.add(store, "ga.proj.w", &[2 * h, dp]),
                    init.add(store, "ga.proj.b", &[1, dp]),
                ));
            }
        }
        for l in 0..cfg.lstm_layers {
            let input = if l == 0 { dp } else { 2 * n };
            layout.encoder.push(Bi {
                fwd: LstmIds::register(store, &format!("enc.l{l}.fwd"), input, n, init),
                bwd: LstmIds::register(store, &format!("enc.l{l}.bwd"), input, n, init),
            });
        }
        for l in 0..cfg.lstm_layers {
            layout.bridge.push(Bridge {
                h_w: init.add(store, &format!("bridge.l{l}.h_w"), &[2 * n, n]),
                h_b: init.add(store, &format!("bridge.l{l}.h_b"), &[1, n]),
                c_w: init.add(store, &format!("bridge.l{l}.c_w"), &[2 * n, n]),
                c_b: init.add(store, &format!("bridge.l{l}.c_b"), &[1, n]),
            });
        }
        for l in 0..cfg.lstm_layers {
            let input = if l == 0 { dt } else { n };
            layout.decoder.push(LstmIds::register(store, &format!("dec.l{l}"), input, n, init));
        }
        layout.attn_w = init.add(store, "attn.w", &[n, 2 * n]);
        layout.attn_out_w = init.add(store, "attn.out.w", &[3 * n, dt]);
        layout.attn_out_b = init.add(store, "attn.out.b", &[1, dt]);
        layout.out_b = init.add(store, "out.b", &[1, target_vocab]);
        layout
    }
}

/// A trained or freshly initialized conversion model.
#[derive(Clone, Debug)]
pub struct P2CModel {
    pub config: ModelConfig,
    pub pinyin_vocab: Vocab,
    pub target_vocab: Vocab,
    pub granularity: Granularity,
    pub params: ParamStore,
    layout: Layout,
}

/// Deterministically initialized model of the configured variant.
pub fn build_variant(cfg: &ModelConfig, pinyin_vocab: Vocab, target_vocab: Vocab, seed: u64) -> Result<P2CModel, ModelError> {
    P2CModel::build(cfg, pinyin_vocab, target_vocab, Some(seed))
}

/// A graph plus the dropout state of one forward pass.
pub struct Pass {
    pub graph: Graph,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl Pass {
    /// Inference: dropout disabled.
    pub fn eval() -> Self {
        Pass {
            graph: Graph::new(),
            dropout: None,
        }
    }

    /// Training: dropout at `rate`, masks drawn from `seed`.
    pub fn train(rate: f64, seed: u64) -> Self {
        Pass {
            graph: Graph::new(),
            dropout: (rate > 0.0).then(|| (rate, ChaCha8Rng::seed_from_u64(seed))),
        }
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    /// Inverted dropout; identity in eval mode.
    pub fn dropout(&mut self, x: Var) -> Result<Var, NumericError> {
        let Some((rate, rng)) = &mut self.dropout else {
            return Ok(x);
        };
        let keep = 1.0 - *rate;
        let shape = self.graph.value(x).shape().to_vec();
        let mask: Vec<f64> = (0..self.graph.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = self.graph.constant(Tensor::new(shape, mask)?);
        self.graph.mul(x, m)
    }
}

/// Encoder output for one source sequence, bound to the graph that produced it.
#[derive(Clone, Debug)]
pub struct EncodedSource {
    /// `[len, 2 * lstm_cells]`: forward and backward states per position.
    pub states: Var,
    pub len: usize,
    states_t: Var,
    /// Per layer: concatenated final `(h, c)` of both directions.
    finals: Vec<(Var, Var)>,
    /// Transposed target embedding, the tied output projection.
    output_t: Var,
}

/// Per-layer `(h, c)` of the decoder LSTM.
#[derive(Clone, Debug)]
pub struct DecoderState {
    pub layers: Vec<(Var, Var)>,
}

pub struct DecodeStep {
    pub state: DecoderState,
    /// `[1, target_vocab]` log-probabilities of the next token.
    pub log_probs: Var,
    /// `[1, source_len]` attention weights over encoder positions.
    pub attention: Var,
}

impl P2CModel {
    fn build(cfg: &ModelConfig, pinyin_vocab: Vocab, target_vocab: Vocab, seed: Option<u64>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            rng: seed.map(ChaCha8Rng::seed_from_u64),
            scale: INIT_SCALE,
        };
        let layout = Layout::register(cfg, pinyin_vocab.len(), target_vocab.len(), &mut store, &mut init);
        Ok(P2CModel {
            config: cfg.clone(),
            pinyin_vocab,
            target_vocab,
            granularity: Granularity::Char,
            params: store,
            layout,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    fn check_ids(&self, ids: &[u32], vocab: usize, what: &str) -> Result<(), ModelError> {
        match ids.iter().find(|&&i| i as usize >= vocab) {
            Some(bad) => Err(NumericError::Domain(format!("{what} id {bad} outside vocabulary of {vocab}")).into()),
            None => Ok(()),
        }
    }

    fn embed(&self, pass: &mut Pass, table: ParamId, ids: &[u32]) -> Result<Var, ModelError> {
        let t = pass.graph.param(&self.params, table);
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        Ok(pass.graph.gather_rows(t, &idx)?)
    }

    /// BiGRU over pinyin or context token ids; row `i` is `[fwd_i; bwd_i]`.
    pub fn encode_bigru(&self, pass: &mut Pass, tokens: &[u32], which: Side) -> Result<Var, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::Empty("bigru input"));
        }
        let unsupported = || ModelError::Unsupported {
            variant: self.variant(),
            what: "BiGRU encoders".into(),
        };
        let (gru, table, vocab) = match which {
            Side::Pinyin => (
                self.layout.gru_pinyin.ok_or_else(unsupported)?,
                self.layout.emb_pinyin.ok_or_else(unsupported)?,
                self.pinyin_vocab.len(),
            ),
            Side::Context => (
                self.layout.gru_context.ok_or_else(unsupported)?,
                self.layout.emb_target,
                self.target_vocab.len(),
            ),
        };
        self.check_ids(tokens, vocab, "token")?;
        let x = self.embed(pass, table, tokens)?;
        let g = &mut pass.graph;
        let fwd = layers::gru_sequence(g, &self.params, &gru.fwd, x, false)?;
        let bwd = layers::gru_sequence(g, &self.params, &gru.bwd, x, true)?;
        let f = g.stack_rows(&fwd)?;
        let b = g.stack_rows(&bwd)?;
        Ok(g.concat_cols(&[f, b])?)
    }

    /// Gated attention of the pinyin BiGRU rows over the context BiGRU rows.
    pub fn gated_source(&self, pass: &mut Pass, context: &[u32], pinyin: &[u32]) -> Result<GatedAttention, ModelError> {
        let hp = self.encode_bigru(pass, pinyin, Side::Pinyin)?;
        let hc = if context.is_empty() {
            None
        } else {
            let hc = self.encode_bigru(pass, context, Side::Context)?;
            Some(pass.graph.rms_norm_rows(hc, GA_NORM_EPS))
        };
        Ok(gated_attention(&mut pass.graph, hp, hc, self.config.ga_hops)?)
    }

    /// Stacked BiLSTM over the source rows `x`.
    pub fn encode_lstm(&self, pass: &mut Pass, x: Var) -> Result<EncodedSource, ModelError> {
        let len = pass.graph.value(x).rows();
        let mut input = x;
        let mut finals = Vec::with_capacity(self.layout.encoder.len());
        for (l, layer) in self.layout.encoder.iter().enumerate() {
            if l > 0 {
                input = pass.dropout(input)?;
            }
            let g = &mut pass.graph;
            let fwd = layers::lstm_sequence(g, &self.params, &layer.fwd, input, false)?;
            let bwd = layers::lstm_sequence(g, &self.params, &layer.bwd, input, true)?;
            let f = g.stack_rows(&fwd.states)?;
            let b = g.stack_rows(&bwd.states)?;
            input = g.concat_cols(&[f, b])?;
            let h = g.concat_cols(&[fwd.last_h, bwd.last_h])?;
            let c = g.concat_cols(&[fwd.last_c, bwd.last_c])?;
            finals.push((h, c));
        }
        let g = &mut pass.graph;
        let states_t = g.transpose(input);
        let emb = g.param(&self.params, self.layout.emb_target);
        let output_t = g.transpose(emb);
        Ok(EncodedSource {
            states: input,
            len,
            states_t,
            finals,
            output_t,
        })
    }

    /// Variant-specific source encoding.
    pub fn encode_source(&self, pass: &mut Pass, context: &[u32], pinyin: &[u32]) -> Result<EncodedSource, ModelError> {
        if pinyin.is_empty() {
            return Err(ModelError::Empty("pinyin"));
        }
        self.check_ids(pinyin, self.pinyin_vocab.len(), "pinyin")?;
        self.check_ids(context, self.target_vocab.len(), "context")?;
        let x = match self.variant() {
            Variant::Basic => self.embed(pass, self.layout.emb_pinyin.expect("basic layout"), pinyin)?,
            Variant::SimpleConcat => {
                let offset = self.pinyin_vocab.len() as u32;
                let stream: Vec<u32> = context
                    .iter()
                    .map(|&c| c + offset)
                    .chain(std::iter::once(BC))
                    .chain(pinyin.iter().copied())
                    .collect();
                self.embed(pass, self.layout.emb_source.expect("concat layout"), &stream)?
            }
            Variant::Gated => {
                let ga = self.gated_source(pass, context, pinyin)?;
                let (w, b) = self.layout.ga_proj.expect("gated layout");
                let g = &mut pass.graph;
                let (w, b) = (g.param(&self.params, w), g.param(&self.params, b));
                let proj = g.matmul(ga.output, w)?;
                g.add_row(proj, b)?
            }
        };
        self.encode_lstm(pass, x)
    }

    /// Decoder state projected from the encoder's final states.
    pub fn init_decoder(&self, pass: &mut Pass, enc: &EncodedSource) -> Result<DecoderState, ModelError> {
        let g = &mut pass.graph;
        let mut layers = Vec::with_capacity(self.layout.bridge.len());
        for (br, &(h, c)) in self.layout.bridge.iter().zip(&enc.finals) {
            let (hw, hb) = (g.param(&self.params, br.h_w), g.param(&self.params, br.h_b));
            let (cw, cb) = (g.param(&self.params, br.c_w), g.param(&self.params, br.c_b));
            let h0 = g.matmul(h, hw)?;
            let h0 = g.add(h0, hb)?;
            let h0 = g.tanh(h0);
            let c0 = g.matmul(c, cw)?;
            let c0 = g.add(c0, cb)?;
            layers.push((h0, c0));
        }
        Ok(DecoderState { layers })
    }

    /// One decoder step returning unnormalized logits.
    fn decode_logits(&self, pass: &mut Pass, state: &DecoderState, prev: u32, enc: &EncodedSource) -> Result<(DecoderState, Var, Var), ModelError> {
        self.check_ids(&[prev], self.target_vocab.len(), "previous token")?;
        let mut input = self.embed(pass, self.layout.emb_target, &[prev])?;
        let mut next = Vec::with_capacity(state.layers.len());
        for (l, (ids, &(h, c))) in self.layout.decoder.iter().zip(&state.layers).enumerate() {
            if l > 0 {
                input = pass.dropout(input)?;
            }
            let g = &mut pass.graph;
            let xw = layers::lstm_input(g, &self.params, ids, input)?;
            let (h2, c2) = layers::lstm_step(g, &self.params, ids, xw, h, c)?;
            next.push((h2, c2));
            input = h2;
        }
        let top = input;
        let g = &mut pass.graph;
        let wa = g.param(&self.params, self.layout.attn_w);
        let query = g.matmul(top, wa)?;
        let scores = g.matmul(query, enc.states_t)?;
        let attention = g.softmax(scores);
        let ctx = g.matmul(attention, enc.states)?;
        let joined = g.concat_cols(&[ctx, top])?;
        let (wc, bc) = (g.param(&self.params, self.layout.attn_out_w), g.param(&self.params, self.layout.attn_out_b));
        let hid = g.matmul(joined, wc)?;
        let hid = g.add(hid, bc)?;
        let hid = g.tanh(hid);
        let out_b = g.param(&self.params, self.layout.out_b);
        let logits = g.matmul(hid, enc.output_t)?;
        let logits = g.add(logits, out_b)?;
        Ok((DecoderState { layers: next }, logits, attention))
    }

    /// One decoder step: global attention over the encoder states, attentional hidden
    /// `tanh(W [ctx; h])`, then log-softmax of its inner products with the target
    /// embeddings.
    pub fn decode_step(&self, pass: &mut Pass, state: &DecoderState, prev: u32, enc: &EncodedSource) -> Result<DecodeStep, ModelError> {
        let (state, logits, attention) = self.decode_logits(pass, state, prev, enc)?;
        let log_probs = pass.graph.log_softmax(logits);
        Ok(DecodeStep {
            state,
            log_probs,
            attention,
        })
    }

    /// Summed teacher-forced negative log-likelihood of `target ++ [EOS]` and the
    /// number of predicted positions.
    pub fn sequence_nll(&self, pass: &mut Pass, context: &[u32], pinyin: &[u32], target: &[u32]) -> Result<(Var, usize), ModelError> {
        if target.is_empty() {
            return Err(ModelError::Empty("target"));
        }
        self.check_ids(target, self.target_vocab.len(), "target")?;
        let context = if self.variant().uses_context() { context } else { &[] };
        let enc = self.encode_source(pass, context, pinyin)?;
        let mut state = self.init_decoder(pass, &enc)?;
        let mut prev = BOS;
        let mut terms = Vec::with_capacity(target.len() + 1);
        for &gold in target.iter().chain(std::iter::once(&EOS)) {
            let (next, logits, _) = self.decode_logits(pass, &state, prev, &enc)?;
            terms.push(pass.graph.cross_entropy(logits, gold as usize)?);
            state = next;
            prev = gold;
        }
        let g = &mut pass.graph;
        let stacked = g.stack_rows(&terms)?;
        Ok((g.sum(stacked), terms.len()))
    }

    /// Mean per-token negative log-likelihood over the batch.
    pub fn forward_loss(&self, pass: &mut Pass, batch: &Batch) -> Result<Var, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Empty("batch"));
        }
        let mut sums = Vec::with_capacity(batch.len());
        let mut count = 0;
        for i in 0..batch.len() {
            let (nll, n) = self.sequence_nll(pass, batch.context.row(i), batch.pinyin.row(i), batch.target.row(i))?;
            sums.push(nll);
            count += n;
        }
        let g = &mut pass.graph;
        let stacked = g.stack_rows(&sums)?;
        let total = g.sum(stacked);
        Ok(g.scale(total, 1.0 / count as f64))
    }

    /// Attention of each pinyin token over each context token for every hop of the
    /// gated model, as `[pinyin_len, context_len]` matrices.
    pub fn attention_trace(&self, context: &[u32], pinyin: &[u32]) -> Result<Vec<Tensor>, ModelError> {
        if self.variant() != Variant::Gated {
            return Err(ModelError::Unsupported {
                variant: self.variant(),
                what: "attention trace".into(),
            });
        }
        if context.is_empty() {
            return Err(ModelError::Empty("context"));
        }
        let mut pass = Pass::eval();
        let ga = self.gated_source(&mut pass, context, pinyin)?;
        Ok(ga.weights.iter().map(|&w| pass.graph.value(w).clone()).collect())
    }

    /// Overwrites embedding rows from `token<SPACE>floats` lines. Tokens absent from
    /// the vocabulary are skipped; rows without a vector keep their random values.
    /// Returns the number of rows replaced.
    pub fn load_embeddings(&mut self, text: &str, side: Side) -> Result<usize, ModelError> {
        let (table, vocab) = match side {
            Side::Pinyin => (
                self.layout.emb_pinyin.or(self.layout.emb_source),
                &self.pinyin_vocab,
            ),
            Side::Context => (Some(self.layout.emb_target), &self.target_vocab),
        };
        let table = table.expect("every variant has a pinyin-side table");
        let dim = self.params.get(table).value.cols();
        let mut loaded = 0;
        let mut updates = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Result<Vec<f64>, _> = fields.map(str::parse).collect();
            let values = values.map_err(|e| ModelError::Embeddings {
                line: i + 1,
                message: e.to_string(),
            })?;
            if values.len() != dim {
                return Err(ModelError::Embeddings {
                    line: i + 1,
                    message: format!("expected {dim} values, got {}", values.len()),
                });
            }
            if let Some(id) = vocab.get(token) {
                updates.push((id as usize, values));
                loaded += 1;
            }
        }
        let data = self.params.get_mut(table).value.data_mut();
        for (row, values) in updates {
            data[row * dim..(row + 1) * dim].copy_from_slice(&values);
        }
        Ok(loaded)
    }
}
