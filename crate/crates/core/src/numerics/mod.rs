//! Dense `f64` tensors and a define-by-run reverse-mode autodiff graph.
//!
//! A [`Graph`] and the [`Var`]s it hands out are confined to one worker. Trained
//! parameters live in a [`ParamStore`] and can be shared read-only across workers,
//! each of which builds its own graph.

mod graph;
mod params;
mod tensor;

pub mod gradcheck;

pub use graph::{ElementwiseOp, Graph, Var};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Numeric tolerances shared by checks across the crate.
#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    /// Finite-difference step for gradient checks.
    pub fd_step: f64,
    /// Maximum relative error between analytic and numeric gradients.
    pub grad_rel_err: f64,
    /// Magnitude below which gradient errors are measured absolutely.
    pub grad_abs_floor: f64,
    /// Probability vectors must sum to one within this.
    pub prob_sum: f64,
    /// Replayed beam scores must match within this.
    pub score_replay: f64,
}

pub const TOLERANCES: Tolerances = Tolerances {
    fd_step: 1e-5,
    grad_rel_err: 1e-4,
    grad_abs_floor: 1e-6,
    prob_sum: 1e-10,
    score_replay: 1e-8,
};
