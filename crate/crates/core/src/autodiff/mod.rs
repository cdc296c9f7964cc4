//! Dense `f64` tensors, a reverse-mode tape with the layers the trading
//! networks use, Adam, and a finite-difference checker.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{clip_global_norm, AdamState};
pub use gradcheck::{grad_check, grad_check_components, grad_check_many, GradCheckReport, RELATIVE_FLOOR};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
