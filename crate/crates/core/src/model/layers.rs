//! Recurrent cells over the autodiff graph.
//!
//! Gate layouts follow the usual convention: GRU weights pack `[reset, update, new]`
//! column blocks, LSTM weights pack `[input, forget, cell, output]`. Inputs are row
//! vectors and weights are stored `[in, out]`, so a step is `x · W`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::{Graph, NumericError, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub(crate) struct GruIds {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub hidden: usize,
}

impl GruIds {
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, init: &mut Init) -> Self {
        GruIds {
            w_ih: init.add(store, &format!("{prefix}.w_ih"), &[input, 3 * hidden]),
            w_hh: init.add(store, &format!("{prefix}.w_hh"), &[hidden, 3 * hidden]),
            b_ih: init.add(store, &format!("{prefix}.b_ih"), &[1, 3 * hidden]),
            b_hh: init.add(store, &format!("{prefix}.b_hh"), &[1, 3 * hidden]),
            hidden,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmIds {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmIds {
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, init: &mut Init) -> Self {
        LstmIds {
            w_ih: init.add(store, &format!("{prefix}.w_ih"), &[input, 4 * hidden]),
            w_hh: init.add(store, &format!("{prefix}.w_hh"), &[hidden, 4 * hidden]),
            b: init.add(store, &format!("{prefix}.b"), &[1, 4 * hidden]),
            hidden,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Bi<T> {
    pub fwd: T,
    pub bwd: T,
}

/// Uniform initializer; `None` leaves parameters at zero (used when loading).
pub(crate) struct Init {
    pub rng: Option<ChaCha8Rng>,
    pub scale: f64,
}

impl Init {
    pub fn add(&mut self, store: &mut ParamStore, name: &str, shape: &[usize]) -> ParamId {
        let scale = self.scale;
        self.add_scaled(store, name, shape, scale)
    }

    pub fn add_scaled(&mut self, store: &mut ParamStore, name: &str, shape: &[usize], scale: f64) -> ParamId {
        let n = shape.iter().product();
        let data = match &mut self.rng {
            Some(rng) => (0..n).map(|_| rng.gen_range(-scale..=scale)).collect(),
            None => vec![0.0; n],
        };
        store.add(name, Tensor::new(shape.to_vec(), data).expect("positive dims"))
    }
}

/// Runs a GRU over the rows of `x`; returns the hidden state at each position, in
/// position order regardless of direction.
pub(crate) fn gru_sequence(
    g: &mut Graph,
    store: &ParamStore,
    ids: &GruIds,
    x: Var,
    reverse: bool,
) -> Result<Vec<Var>, NumericError> {
    let h = ids.hidden;
    let len = g.value(x).rows();
    let (w_ih, w_hh) = (g.param(store, ids.w_ih), g.param(store, ids.w_hh));
    let (b_ih, b_hh) = (g.param(store, ids.b_ih), g.param(store, ids.b_hh));
    let xw = g.matmul(x, w_ih)?;
    let xw = g.add_row(xw, b_ih)?;
    let xr = g.slice_cols(xw, 0, h)?;
    let xz = g.slice_cols(xw, h, h)?;
    let xn = g.slice_cols(xw, 2 * h, h)?;

    let mut state = g.constant(Tensor::zeros(vec![1, h]));
    let mut out = vec![state; len];
    let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
    for t in order {
        let hw = g.matmul(state, w_hh)?;
        let hw = g.add(hw, b_hh)?;
        let (hr, hz, hn) = (g.slice_cols(hw, 0, h)?, g.slice_cols(hw, h, h)?, g.slice_cols(hw, 2 * h, h)?);
        let (xr_t, xz_t, xn_t) = (g.gather_rows(xr, &[t])?, g.gather_rows(xz, &[t])?, g.gather_rows(xn, &[t])?);

        let r = g.add(xr_t, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(xz_t, hz)?;
        let z = g.sigmoid(z);
        let rn = g.mul(r, hn)?;
        let n = g.add(xn_t, rn)?;
        let n = g.tanh(n);
        // h' = (1 - z) ⊙ n + z ⊙ h = n + z ⊙ (h - n)
        let diff = g.sub(state, n)?;
        let zd = g.mul(z, diff)?;
        state = g.add(n, zd)?;
        out[t] = state;
    }
    Ok(out)
}

/// One LSTM step given the precomputed input contribution `xw_t = x_t · W_ih + b`.
pub(crate) fn lstm_step(
    g: &mut Graph,
    store: &ParamStore,
    ids: &LstmIds,
    xw_t: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var), NumericError> {
    let n = ids.hidden;
    let w_hh = g.param(store, ids.w_hh);
    let hw = g.matmul(h, w_hh)?;
    let gates = g.add(xw_t, hw)?;
    let i = g.slice_cols(gates, 0, n)?;
    let i = g.sigmoid(i);
    let f = g.slice_cols(gates, n, n)?;
    let f = g.sigmoid(f);
    let cand = g.slice_cols(gates, 2 * n, n)?;
    let cand = g.tanh(cand);
    let o = g.slice_cols(gates, 3 * n, n)?;
    let o = g.sigmoid(o);
    let fc = g.mul(f, c)?;
    let ic = g.mul(i, cand)?;
    let c_next = g.add(fc, ic)?;
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// `x · W_ih + b` for every row of `x`.
pub(crate) fn lstm_input(g: &mut Graph, store: &ParamStore, ids: &LstmIds, x: Var) -> Result<Var, NumericError> {
    let w_ih = g.param(store, ids.w_ih);
    let b = g.param(store, ids.b);
    let xw = g.matmul(x, w_ih)?;
    g.add_row(xw, b)
}

/// Per-position hidden states plus the final `(h, c)` of the sweep.
pub(crate) struct LstmRun {
    pub states: Vec<Var>,
    pub last_h: Var,
    pub last_c: Var,
}

pub(crate) fn lstm_sequence(
    g: &mut Graph,
    store: &ParamStore,
    ids: &LstmIds,
    x: Var,
    reverse: bool,
) -> Result<LstmRun, NumericError> {
    let n = ids.hidden;
    let len = g.value(x).rows();
    let xw = lstm_input(g, store, ids, x)?;
    let mut h = g.constant(Tensor::zeros(vec![1, n]));
    let mut c = g.constant(Tensor::zeros(vec![1, n]));
    let mut states = vec![h; len];
    let order: Vec<usize> = if reverse { (0..len).rev().collect() } else { (0..len).collect() };
    for t in order {
        let xw_t = g.gather_rows(xw, &[t])?;
        (h, c) = lstm_step(g, store, ids, xw_t, h, c)?;
        states[t] = h;
    }
    Ok(LstmRun {
        states,
        last_h: h,
        last_c: c,
    })
}
