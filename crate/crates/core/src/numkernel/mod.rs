//! Dense `f64` tensors, forward/backward kernels and a reverse-mode tape.

pub mod gradcheck;
pub mod ops;
pub mod tape;
pub mod tensor;

pub use gradcheck::{analytic_gradient, grad_check, numeric_gradient};
pub use ops::{conv2d, matmul, pointwise, softmax, Pointwise};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
