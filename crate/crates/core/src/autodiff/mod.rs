//! Reverse-mode differentiation over dense tensors, optimisers and a
//! finite-difference gradient checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    analytic_gradients, compare_gradients, grad_check, GradCheckConfig, GradCheckReport, GradMismatch,
    ParamCheck,
};
pub use params::{Optimizer, ParamId, ParamStore};
pub use tape::{Gradients, NodeId, Tape, ZERO_NORM};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
