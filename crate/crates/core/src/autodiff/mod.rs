//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! The pieces are deliberately small: [`Tensor`] holds data, [`Tape`]
//! records one forward pass and replays it backwards, [`ParamStore`] owns the
//! trainable tensors, [`Adam`] updates them and [`grad_check`] compares tape
//! gradients against central differences.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{grad_check, primitive_suite, GradCheckOptions, GradCheckReport, WorstEntry};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Tape, UnaryFn, Var};
pub use tensor::Tensor;
