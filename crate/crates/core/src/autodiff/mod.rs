//! Minimal reverse-mode differentiation over dense `f64` tensors: exactly
//! the ops the vocoder, encoder and verifier need, plus Adam and a
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod kernels;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, op_suite, GradCheckReport};
pub use optim::{Adam, AdamConfig, AdamState};
pub use params::{Gradients, ParamStore, Parameter};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
