//! LookupFFN: feed-forward layers built from learnable hash-table lookups.
//!
//! A LookupFFN layer replaces the two GEMMs of a dense feed-forward network
//! with a cheap structured projection (the *hash* step) followed by a
//! weighted gather from `h` learnable tables of `2^tau` rows (the *gather*
//! step). Every piece is differentiable, so tables and projections train by
//! plain backpropagation and never need to be rebuilt.
//!
//! The crate is `no_std` + `alloc`. Enable the `std` feature to get runtime
//! CPU feature detection in the GEMM backend and the system math library.
//!
//! Module map:
//!
//! * [`fwht`]: unnormalized fast Walsh–Hadamard transform.
//! * [`proj`]: dense, BH{m}, ACDC (Hadamard) and sign-flip projections.
//! * [`lookup`]: hash codes, the product-form softmax denominator, neighbor
//!   sampling, and the LookupFFN forward/backward.
//! * [`baselines`]: the dense FFN, hyperplane LSH diagnostics and the static
//!   YOSO table estimator.
//! * [`flops`]: analytic per-token FLOP model and an instrumented op counter.
//! * [`train`]: optimizers, finite-difference gradient checks and desk-scale
//!   distillation training.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
// `num_traits::Float` supplies the float methods without std. Whenever any
// crate in the graph links std (the `std` feature, or dev-dependencies when
// testing) the inherent methods win and those imports look unused.
#![allow(unused_imports)]

extern crate alloc;

pub mod baselines;
pub mod error;
pub mod flops;
pub mod fwht;
pub mod lookup;
pub mod matrix;
pub mod proj;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use matrix::Matrix;
