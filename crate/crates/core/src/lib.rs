//! Differentially private synthetic data from noisy random projections.
//!
//! A private table is encoded into a matrix `X` with unit-bounded rows and
//! released once through the slicing mechanism `(U, XU + V)`. A generator is
//! then fitted to the released projections by minimizing a smoothed-sliced
//! f-divergence estimated with kernel mean matching. Training, sampling and
//! evaluation only ever see the released bundle, so they cost no privacy.

pub mod accounting;
pub mod divergence;
pub mod error;
pub mod evaluate;
pub mod generator;
pub mod matrix;
pub mod mechanism;
pub mod rng;
pub mod table;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};
pub use matrix::Matrix;
