//! Dense matrices, the reverse-mode tape and finite-difference checking.

pub mod gradcheck;
mod matrix;
pub mod opcount;
mod tape;

pub use matrix::Matrix;
pub use tape::{gelu, gelu_grad, Gradients, Tape, Var};
