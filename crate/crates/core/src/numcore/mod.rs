//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, GradCheck};
pub use tape::{huber_grad, huber_value, wrap_angle, Gradients, Tape, Var};
pub use tensor::Tensor;
