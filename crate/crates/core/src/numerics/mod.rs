//! Dense tensors, layer kernels and reverse-mode gradients.

mod gradcheck;
pub mod ops;
mod real;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use ops::Mode;
pub use real::{Dtype, Real};
pub use tape::{Grads, Tape, Var};
pub use tensor::{glorot_bound, Tensor};

#[cfg(test)]
mod tests;
