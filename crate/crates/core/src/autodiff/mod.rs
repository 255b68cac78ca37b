//! Reverse-mode automatic differentiation over dense vectors and matrices.
//!
//! The tape is rebuilt for every forward pass: gate decisions change which
//! ops run, so there is no static graph to cache.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, GradCheck};
pub use tape::{argmax, Gradients, Op, Tape, Var};
pub use tensor::{Real, Tensor};
