//! Minimal dense float64 numeric core with reverse-mode differentiation.
//!
//! Three pieces: [`Tensor`] plus plain forward functions (also the
//! inference fast path), [`Tape`] recording differentiable ops for a single
//! backward pass, and [`Params`] holding named trainable tensors with their
//! Adam state and checkpoint serialization. Everything is float64; speed at
//! this scale comes from batching rows into matrices, not from precision
//! tricks.

pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use params::{ParamId, Params};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

use rand::Rng;

/// Inverted-dropout mask: entries are 0 with probability `rate` and
/// 1/(1-rate) otherwise, so the expected activation is unchanged and
/// inference needs no rescaling. Apply with [`Tape::mul_const`].
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut impl Rng) -> Tensor {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1), got {rate}");
    if rate == 0.0 {
        return Tensor::from_vec(rows, cols, vec![1.0; rows * cols]);
    }
    let keep = 1.0 - rate;
    let data = (0..rows * cols)
        .map(|_| if rng.gen_bool(rate) { 0.0 } else { 1.0 / keep })
        .collect();
    Tensor::from_vec(rows, cols, data)
}

#[cfg(test)]
mod tests;
