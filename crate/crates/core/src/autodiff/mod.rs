//! Minimal reverse-mode differentiation over dense f64 matrices.
//!
//! The primitive set is exactly what the refinement objectives and the toy
//! language model need. Hard selections (top-k, boolean masks) are frozen when
//! recorded and pass gradient only to the entries they picked.

mod check;
mod tape;
mod tensor;

pub use check::{grad_check, ABSOLUTE_FALLBACK};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax_in_place;
