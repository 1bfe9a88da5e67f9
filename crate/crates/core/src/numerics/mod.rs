//! Dense linear algebra, seeded randomness and reverse-mode differentiation.

mod matrix;
mod optim;
mod rng;
mod svd;
mod tape;

pub use matrix::{gemm, Matrix};
pub use optim::{sgd_step, Adam};
pub use rng::Rng;
pub use svd::{svd_truncated, Svd};
pub use tape::{Gradients, Tape, Var};
