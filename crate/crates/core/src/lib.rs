//! Periodic homogenization toolkit for second-gradient linear elasticity
//! with chiral scale-size effects.
//!
//! The crate builds periodic coefficient fields on the unit cell, measures
//! their intrinsic material lengths, classifies the admissible scaling
//! regimes, solves the associated periodic corrector problems with a
//! matrix-free pseudo-spectral method, assembles effective tensors, and
//! cross-checks the homogenization limit against one-dimensional fine-scale
//! finite-element solves and a discrete unfolding operator.

pub mod cell;
pub mod effective;
pub mod error;
pub mod io;
pub mod macro1d;
pub mod microstructure;
pub mod scaling;
pub mod spectral;
pub mod unfolding;
pub mod tensor;

pub use error::{Error, Result};
