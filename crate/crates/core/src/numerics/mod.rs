//! Deterministic numerical kernels shared by the whole pipeline: dense linear
//! algebra, softmax/normalization primitives, SPD matrix functions, a seeded
//! explicit-state RNG, and a finite-difference gradient checker.
//!
//! Everything here is a pure function of its inputs and safe to call from
//! multiple threads; the one exception is [`Rng`], which is single-owner.

pub mod gradcheck;
pub mod matrix;
pub mod rng;
pub mod spd;

pub use gradcheck::{finite_diff_grad, grad_relative_error, DEFAULT_STEP};
pub use matrix::{dot, l2_norm, l2_normalize, softmax, DenseMatrix};
pub use rng::Rng;
pub use spd::{random_spd, SpdMatrix};
