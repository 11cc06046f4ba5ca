//! Reverse-mode differentiation over dense `f64` matrices, plus Adam.

mod adam;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use tape::{AutodiffError, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Layer-norm variance floor used by every network in the crate.
pub const LAYER_NORM_EPS: f64 = 1e-5;
