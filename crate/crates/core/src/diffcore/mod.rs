//! Dense 64-bit tensors with a define-by-run reverse-mode tape.
//!
//! The primitive set is deliberately small: it covers exactly what the
//! recommender's forward pass and losses need. Tensors are at most
//! two-dimensional; a 1-D tensor of length `n` acts as a single row in
//! matrix products and as `n` rows of width one in row-gathering.

mod gradcheck;
mod init;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_EPS};
pub use init::{xavier_bound, xavier_init};
pub use ops::{log_sigmoid_scalar, sigmoid_scalar, softplus_scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
